//! Classical rate distortion function of stationary Gaussian processes from the power spectral
//! density, and the excess rate of the nonanticipative RDF over it.
//!
//! Frequencies are sampled on a uniform periodic grid of `n` points on `[-π, π)`. The spectrum
//! satisfies `S(-ω) = conj(S(ω))`, so eigenvalues are computed on `[0, π]` only and weighted.
//! All eigenvalues at all frequencies share one water level `θ`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::{solve, ChannelNoise, GaussMarkovModel, GaussOptions};

pub const DEFAULT_GRID: usize = 1 << 14;
pub const MAX_GRID: usize = 1 << 20;
/// Change in rate between a grid and its half that counts as converged.
pub const REFINE_TOL: f64 = 1e-7;
const THETA_TOL: f64 = 1e-12;

type Evaluator = dyn Fn(f64) -> DMatrix<Complex<f64>> + Send + Sync;

/// Matrix power spectral density `ω ↦ S(ω)` of a `dim`-variate process.
#[derive(Clone)]
pub struct SpectralDensity {
    evaluator: Arc<Evaluator>,
    dim: usize,
    pub grid_size: usize,
}

impl fmt::Debug for SpectralDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralDensity")
            .field("dim", &self.dim)
            .field("grid_size", &self.grid_size)
            .finish()
    }
}

impl SpectralDensity {
    /// `f` must return a Hermitian PSD `dim x dim` matrix with `f(-ω) = conj(f(ω))`.
    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<Complex<f64>> + Send + Sync + 'static,
    {
        SpectralDensity {
            evaluator: Arc::new(f),
            dim,
            grid_size: DEFAULT_GRID,
        }
    }

    /// White noise with covariance `cov`.
    pub fn flat(cov: DMatrix<f64>) -> Self {
        let dim = cov.nrows();
        let c = cov.map(|v| Complex::new(v, 0.0));
        Self::from_fn(dim, move |_| c.clone())
    }

    pub fn with_grid_size(mut self, n: usize) -> Self {
        self.grid_size = n;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, omega: f64) -> DMatrix<Complex<f64>> {
        (self.evaluator)(omega)
    }

    /// Eigenvalues at `ω_j = 2πj/n`, `j = 0..=n/2`.
    fn half_grid_eigs(&self, n: usize) -> Vec<Vec<f64>> {
        (0..=n / 2)
            .into_par_iter()
            .map(|j| {
                let s = self.eval(2.0 * PI * j as f64 / n as f64);
                if self.dim == 1 {
                    vec![s[(0, 0)].re.max(0.0)]
                } else {
                    let h = (&s + s.adjoint()) * Complex::new(0.5, 0.0);
                    SymmetricEigen::new(h).eigenvalues.iter().map(|v| v.max(0.0)).collect()
                }
            })
            .collect()
    }

    /// `(1/2π) ∫ tr S(ω) dω` on the default grid.
    pub fn total_power(&self) -> Result<f64> {
        check_grid(self.grid_size)?;
        Ok(grid_mean(&self.half_grid_eigs(self.grid_size), 1, |e| e.iter().sum()))
    }
}

fn check_grid(n: usize) -> Result<()> {
    if n < 4 || !n.is_power_of_two() {
        return Err(Error::domain(format!("grid size {n} must be a power of two >= 4")));
    }
    Ok(())
}

/// Periodic trapezoid mean over `[-π, π)` from the half grid, using every `stride`-th point.
fn grid_mean(eigs: &[Vec<f64>], stride: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let last = eigs.len() - 1;
    let n = 2 * last / stride;
    let mut acc = 0.0;
    for j in (0..=last).step_by(stride) {
        let w = if j == 0 || j == last { 1.0 } else { 2.0 };
        acc += w * f(&eigs[j]);
    }
    acc / n as f64
}

fn distortion_at(eigs: &[Vec<f64>], stride: usize, theta: f64) -> f64 {
    grid_mean(eigs, stride, |e| e.iter().map(|&s| s.min(theta)).sum())
}

fn rate_at(eigs: &[Vec<f64>], stride: usize, theta: f64) -> f64 {
    grid_mean(eigs, stride, |e| {
        e.iter().filter(|&&s| s > theta).map(|&s| 0.5 * (s / theta).log2()).sum()
    })
}

/// Water level and rate on one grid resolution.
fn waterfill_grid(eigs: &[Vec<f64>], stride: usize, d: f64) -> (f64, f64) {
    let max = eigs.iter().step_by(stride).flatten().copied().fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0_f64, max);
    while hi - lo > THETA_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if distortion_at(eigs, stride, mid) > d {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    // distortion is linear in θ once the set of eigenvalues above it is fixed
    let below = grid_mean(eigs, stride, |e| e.iter().filter(|&&s| s <= theta).sum());
    let above = grid_mean(eigs, stride, |e| e.iter().filter(|&&s| s > theta).count() as f64);
    if above > 0.0 {
        let exact = (d - below) / above;
        if (exact - theta).abs() <= 2.0 * THETA_TOL * theta {
            theta = exact;
        }
    }
    (theta, rate_at(eigs, stride, theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassicalRdf {
    /// Bits per sample.
    pub rate: f64,
    pub water_level: f64,
    /// Grid that met the refinement tolerance.
    pub grid_size: usize,
    /// `|R_n - R_{n/2}|` at that grid.
    pub refinement_change: f64,
}

/// Classical R(D) in bits per sample with adaptive grid refinement starting at
/// `spec.grid_size`. `D` at or above the total power gives rate 0.
pub fn classical_rdf_detailed(spec: &SpectralDensity, d: f64) -> Result<ClassicalRdf> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::domain(format!("distortion {d} must be positive")));
    }
    check_grid(spec.grid_size)?;
    let mut n = spec.grid_size;
    loop {
        let eigs = spec.half_grid_eigs(n);
        let total = grid_mean(&eigs, 1, |e| e.iter().sum());
        if d >= total {
            return Ok(ClassicalRdf {
                rate: 0.0,
                water_level: eigs.iter().flatten().copied().fold(0.0, f64::max),
                grid_size: n,
                refinement_change: 0.0,
            });
        }
        let (theta, rate) = waterfill_grid(&eigs, 1, d);
        let coarse = if d >= grid_mean(&eigs, 2, |e| e.iter().sum()) {
            0.0
        } else {
            waterfill_grid(&eigs, 2, d).1
        };
        let change = (rate - coarse).abs();
        if change < REFINE_TOL {
            return Ok(ClassicalRdf {
                rate,
                water_level: theta,
                grid_size: n,
                refinement_change: change,
            });
        }
        if n >= MAX_GRID {
            return Err(Error::NonConvergence {
                iterations: n,
                residual: change,
            });
        }
        n *= 2;
    }
}

pub fn classical_rdf(spec: &SpectralDensity, d: f64) -> Result<f64> {
    classical_rdf_detailed(spec, d).map(|r| r.rate)
}

/// `S(ω) = C (e^{iω} I - A)^{-1} B B' (e^{-iω} I - A')^{-1} C' + N N'` for stable `A`.
pub fn spectrum_from_model(model: &GaussMarkovModel) -> Result<SpectralDensity> {
    if !model.is_stable() {
        return Err(Error::InvalidModel(format!(
            "A has spectral radius {} >= 1, the process has no spectral density",
            model.spectral_radius()
        )));
    }
    let cx = |m: &DMatrix<f64>| m.map(|v| Complex::new(v, 0.0));
    let a = cx(model.a());
    let ct = cx(&model.c().transpose());
    let bb = cx(&model.process_noise());
    let nn = cx(&model.observation_noise());
    let m = a.nrows();
    let p = model.dims().p;
    Ok(SpectralDensity::from_fn(p, move |omega| {
        let z = Complex::new(omega.cos(), omega.sin());
        let pencil = DMatrix::<Complex<f64>>::identity(m, m) * z - &a;
        // F' = (zI - A)'^{-1} C' gives F = C (zI - A)^{-1}
        let ft = pencil
            .transpose()
            .lu()
            .solve(&ct)
            .expect("zI - A is invertible on the unit circle for stable A");
        let f = ft.transpose();
        &f * &bb * f.adjoint() + &nn
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateLoss {
    pub distortion: f64,
    pub nrdf: f64,
    pub classical: f64,
    /// `nrdf - classical`.
    pub loss: f64,
}

/// Excess of the nonanticipative RDF over the classical RDF at `D`, in bits per sample.
pub fn zero_delay_rate_loss(
    model: &GaussMarkovModel,
    d: f64,
    noise: &ChannelNoise,
    opts: &GaussOptions,
) -> Result<RateLoss> {
    let spec = spectrum_from_model(model)?;
    let nrdf = solve(model, d, noise, opts)?.rate;
    let classical = classical_rdf(&spec, d)?;
    Ok(RateLoss {
        distortion: d,
        nrdf,
        classical,
        loss: nrdf - classical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::stationary_covariance;

    fn ar1(n: f64) -> GaussMarkovModel {
        GaussMarkovModel::scalar(0.9, 1.0, 1.0, n).unwrap()
    }

    #[test]
    fn ar1_spectrum_endpoints() {
        let s = spectrum_from_model(&ar1(0.1)).unwrap();
        assert!((s.eval(0.0)[(0, 0)].re - 100.01).abs() < 1e-10);
        assert!((s.eval(PI)[(0, 0)].re - 0.28701).abs() < 1e-5);
        assert!((s.eval(PI)[(0, 0)].re - (1.0 / 3.61 + 0.01)).abs() < 1e-12);
        let w: f64 = 0.7;
        let closed = 1.0 / (1.0 - 1.8 * w.cos() + 0.81) + 0.01;
        assert!((s.eval(w)[(0, 0)].re - closed).abs() < 1e-12);
    }

    #[test]
    fn white_spectrum() {
        let model = GaussMarkovModel::scalar(0.0, 0.0, 1.0, 2.0).unwrap();
        let s = spectrum_from_model(&model).unwrap();
        for w in [0.0, 1.0, -2.0, PI] {
            assert_eq!(s.eval(w)[(0, 0)], Complex::new(4.0, 0.0));
        }
        assert!((classical_rdf(&s, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(classical_rdf(&s, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn unstable_rejected() {
        let model = GaussMarkovModel::scalar(1.1, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(spectrum_from_model(&model), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn power_matches_lyapunov() {
        let dims = crate::gauss::ModelDims { m: 2, k: 2, p: 2, d: 2 };
        let model = GaussMarkovModel::from_row_major(
            dims,
            &[0.9, 0.2, -0.1, 0.6],
            &[1.0, 0.0, 0.3, 0.8],
            &[1.0, 0.0, 0.5, 1.0],
            &[0.3, 0.0, 0.0, 0.5],
        )
        .unwrap();
        for m in [ar1(0.1), model] {
            let s = spectrum_from_model(&m).unwrap();
            let stat = stationary_covariance(&m).unwrap();
            let want = (m.c() * stat * m.c().transpose() + m.observation_noise()).trace();
            assert!((s.total_power().unwrap() - want).abs() < 1e-6);
        }
    }

    #[test]
    fn spectrum_hermitian_symmetric() {
        let dims = crate::gauss::ModelDims { m: 2, k: 1, p: 2, d: 2 };
        let model = GaussMarkovModel::from_row_major(
            dims,
            &[0.5, 0.4, -0.3, 0.2],
            &[1.0, 0.5],
            &[1.0, 0.0, 0.3, 1.0],
            &[0.1, 0.0, 0.0, 0.1],
        )
        .unwrap();
        let s = spectrum_from_model(&model).unwrap();
        for w in [0.3, 1.7, 2.9] {
            let (p, m) = (s.eval(w), s.eval(-w));
            assert!((&p - p.adjoint()).iter().all(|z| z.norm() < 1e-12));
            assert!((m - p.conjugate()).iter().all(|z| z.norm() < 1e-12));
        }
    }

    #[test]
    fn ar1_anchor_below_min_spectrum() {
        let s = spectrum_from_model(&GaussMarkovModel::scalar(0.9, 1.0, 1.0, 0.0).unwrap()).unwrap();
        for d in [0.01, 0.1, 0.2, 0.277] {
            let r = classical_rdf(&s, d).unwrap();
            assert!((r - 0.5 * (1.0 / d).log2()).abs() < 1e-4, "D={d}: {r}");
        }
    }

    #[test]
    fn refinement_stable() {
        let s = spectrum_from_model(&ar1(0.1)).unwrap();
        let r = classical_rdf_detailed(&s, 1.0).unwrap();
        let finer = classical_rdf_detailed(&s.clone().with_grid_size(r.grid_size * 2), 1.0).unwrap();
        assert!((r.rate - finer.rate).abs() < 1e-6);
        assert!(classical_rdf(&s.clone().with_grid_size(1000), 1.0).is_err());
    }

    #[test]
    fn rdf_convex_nonincreasing() {
        let s = spectrum_from_model(&ar1(0.1)).unwrap();
        let rates: Vec<f64> = (1..=20).map(|i| classical_rdf(&s, 0.25 * i as f64).unwrap()).collect();
        for w in rates.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for w in rates.windows(3) {
            assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-7);
        }
    }

    #[test]
    fn flat_equals_memoryless_nrdf() {
        let model = GaussMarkovModel::scalar(0.0, 0.0, 1.0, 1.0).unwrap();
        for d in [0.1, 0.25, 0.5, 1.0] {
            let rl = zero_delay_rate_loss(&model, d, &ChannelNoise::MatchDistortion, &GaussOptions::default())
                .unwrap();
            assert!(rl.loss.abs() < 1e-6);
        }
    }

    #[test]
    fn ar1_rate_loss_positive() {
        let model = ar1(0.1);
        let total = spectrum_from_model(&model).unwrap().total_power().unwrap();
        for d in [0.1, 0.5, 1.0, 3.0] {
            let rl = zero_delay_rate_loss(&model, d, &ChannelNoise::MatchDistortion, &GaussOptions::default())
                .unwrap();
            assert!(rl.loss > 0.0, "D={d}: {rl:?}");
        }
        let rl = zero_delay_rate_loss(&model, total, &ChannelNoise::MatchDistortion, &GaussOptions::default())
            .unwrap();
        assert!(rl.nrdf.abs() < 1e-9 && rl.classical == 0.0);
    }
}
