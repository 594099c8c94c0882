use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use super::linalg::{complex_rank, psd_sqrt, spectral_radius};
use crate::error::{Error, Result};

/// Eigenvalues with modulus at least `1 - MARGINAL_TOL` are treated as not stable in the PBH tests.
const MARGINAL_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

/// Dimensions `(m, k, p, d)` of state, process noise, observation and observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub m: usize,
    pub k: usize,
    pub p: usize,
    pub d: usize,
}

/// `Z_{t+1} = A Z_t + B W_t`, `X_t = C Z_t + N V_t` with standard Gaussian `W`, `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussMarkovModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    n: DMatrix<f64>,
}

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::InvalidModel(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(format!("{name} has a non-finite entry")));
    }
    Ok(())
}

impl GaussMarkovModel {
    /// Checks shapes only. Use [`GaussMarkovModel::check_assumptions`] for detectability and
    /// stabilizability.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, n: DMatrix<f64>) -> Result<Self> {
        let m = a.nrows();
        let p = c.nrows();
        if m == 0 || p == 0 {
            return Err(Error::InvalidModel("state and observation must be nonempty".into()));
        }
        check_shape("A", &a, m, m)?;
        check_shape("B", &b, m, b.ncols())?;
        check_shape("C", &c, p, m)?;
        check_shape("N", &n, p, n.ncols())?;
        Ok(GaussMarkovModel { a, b, c, n })
    }

    /// Builds the model from row-major arrays.
    pub fn from_row_major(dims: ModelDims, a: &[f64], b: &[f64], c: &[f64], n: &[f64]) -> Result<Self> {
        let ModelDims { m, k, p, d } = dims;
        let mat = |name: &str, data: &[f64], rows: usize, cols: usize| {
            if data.len() != rows * cols {
                return Err(Error::InvalidModel(format!(
                    "{name} has {} entries, dims require {rows}x{cols} = {}",
                    data.len(),
                    rows * cols
                )));
            }
            Ok(DMatrix::from_row_slice(rows, cols, data))
        };
        Self::new(mat("A", a, m, m)?, mat("B", b, m, k)?, mat("C", c, p, m)?, mat("N", n, p, d)?)
    }

    /// Scalar model `z' = a z + b w`, `x = c z + n v`.
    pub fn scalar(a: f64, b: f64, c: f64, n: f64) -> Result<Self> {
        let one = |v| DMatrix::from_element(1, 1, v);
        Self::new(one(a), one(b), one(c), one(n))
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            m: self.a.nrows(),
            k: self.b.ncols(),
            p: self.c.nrows(),
            d: self.n.ncols(),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn n(&self) -> &DMatrix<f64> {
        &self.n
    }

    pub fn process_noise(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose()
    }

    pub fn observation_noise(&self) -> DMatrix<f64> {
        &self.n * self.n.transpose()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// `(C, A)` detectable by the PBH test: `[μI - A; C]` has full column rank for every
    /// eigenvalue `μ` of `A` with `|μ| >= 1`.
    pub fn is_detectable(&self) -> bool {
        let m = self.a.nrows();
        let p = self.c.nrows();
        self.unstable_modes().into_iter().all(|mu| {
            let mut pbh = DMatrix::<Complex<f64>>::zeros(m + p, m);
            pbh.view_mut((0, 0), (m, m)).copy_from(&pencil(&self.a, mu));
            pbh.view_mut((m, 0), (p, m)).copy_from(&self.c.map(|v| Complex::new(v, 0.0)));
            complex_rank(&pbh, RANK_TOL) == m
        })
    }

    /// `(A, sqrt(BB'))` stabilizable by the PBH test: `[μI - A, sqrt(BB')]` has full row rank
    /// for every eigenvalue `μ` of `A` with `|μ| >= 1`.
    pub fn is_stabilizable(&self) -> bool {
        let m = self.a.nrows();
        let root = psd_sqrt(&self.process_noise()).map(|v| Complex::new(v, 0.0));
        self.unstable_modes().into_iter().all(|mu| {
            let mut pbh = DMatrix::<Complex<f64>>::zeros(m, 2 * m);
            pbh.view_mut((0, 0), (m, m)).copy_from(&pencil(&self.a, mu));
            pbh.view_mut((0, m), (m, m)).copy_from(&root);
            complex_rank(&pbh, RANK_TOL) == m
        })
    }

    /// Detectability, stabilizability and a nonzero observation noise gain.
    pub fn check_assumptions(&self) -> Result<()> {
        if self.n.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidModel("observation noise gain N is zero".into()));
        }
        if !self.is_detectable() {
            return Err(Error::InvalidModel("(C, A) is not detectable".into()));
        }
        if !self.is_stabilizable() {
            return Err(Error::InvalidModel("(A, sqrt(BB')) is not stabilizable".into()));
        }
        Ok(())
    }

    fn unstable_modes(&self) -> Vec<Complex<f64>> {
        self.a
            .complex_eigenvalues()
            .iter()
            .copied()
            .filter(|z| z.norm() >= 1.0 - MARGINAL_TOL)
            .collect()
    }
}

fn pencil(a: &DMatrix<f64>, mu: Complex<f64>) -> DMatrix<Complex<f64>> {
    let m = a.nrows();
    DMatrix::from_fn(m, m, |i, j| {
        let diag = if i == j { mu } else { Complex::new(0.0, 0.0) };
        diag - Complex::new(a[(i, j)], 0.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_mismatch_rejected() {
        let dims = ModelDims { m: 2, k: 1, p: 1, d: 1 };
        let err = GaussMarkovModel::from_row_major(dims, &[1.0, 0.0, 0.0], &[1.0, 1.0], &[1.0, 0.0], &[1.0]);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
        let ok = GaussMarkovModel::from_row_major(dims, &[0.5, 0.0, 0.0, 0.5], &[1.0, 1.0], &[1.0, 0.0], &[1.0]);
        assert_eq!(ok.unwrap().dims(), dims);
    }

    #[test]
    fn stable_model_passes() {
        let m = GaussMarkovModel::scalar(0.9, 1.0, 1.0, 0.1).unwrap();
        assert!(m.is_stable());
        m.check_assumptions().unwrap();
    }

    #[test]
    fn unobservable_unstable_mode_rejected() {
        // second state grows and is never observed
        let dims = ModelDims { m: 2, k: 2, p: 1, d: 1 };
        let m = GaussMarkovModel::from_row_major(
            dims,
            &[0.5, 0.0, 0.0, 1.2],
            &[1.0, 0.0, 0.0, 1.0],
            &[1.0, 0.0],
            &[1.0],
        )
        .unwrap();
        assert!(!m.is_detectable());
        assert!(m.is_stabilizable());
        assert!(m.check_assumptions().is_err());
    }

    #[test]
    fn unexcited_unstable_mode_rejected() {
        let m = GaussMarkovModel::scalar(1.5, 0.0, 1.0, 1.0).unwrap();
        assert!(m.is_detectable());
        assert!(!m.is_stabilizable());
        assert!(m.check_assumptions().is_err());
    }

    #[test]
    fn rotation_has_complex_modes() {
        // unit-circle rotation, observed through the first coordinate
        let dims = ModelDims { m: 2, k: 2, p: 1, d: 1 };
        let (c, s) = (0.6_f64, 0.8_f64);
        let m = GaussMarkovModel::from_row_major(dims, &[c, -s, s, c], &[1.0, 0.0, 0.0, 1.0], &[1.0, 0.0], &[0.5])
            .unwrap();
        assert!(!m.is_stable());
        m.check_assumptions().unwrap();
    }

    #[test]
    fn zero_noise_gain_rejected() {
        let m = GaussMarkovModel::scalar(0.5, 1.0, 1.0, 0.0).unwrap();
        assert!(m.check_assumptions().is_err());
    }
}
