//! Small dense helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues in descending order and the matching unit eigenvectors as columns, each with
/// its largest-magnitude entry made positive (first such entry on ties).
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let mut pivot = 0;
        for r in 1..n {
            if v[r].abs() > v[pivot].abs() + 1e-12 {
                pivot = r;
            }
        }
        if v[pivot] < 0.0 {
            v = -v;
        }
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm of a symmetric matrix.
pub(crate) fn sym_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// Symmetric PSD square root, negative eigenvalues clamped to zero.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let root = DVector::from_iterator(m.nrows(), eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0, |acc: f64, z| acc.max(z.norm()))
}

/// Numerical rank of a complex matrix from its singular values.
pub(crate) fn complex_rank(m: &DMatrix<Complex<f64>>, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * max.max(1.0)).count()
}

/// Solves `X = A X A' + W` for stable `A` through the Kronecker form.
pub(crate) fn lyapunov(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let kron = a.kronecker(a);
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - kron;
    // column-major vec
    let rhs = DVector::from_column_slice(w.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular (A not stable)".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Inverse of a symmetric PSD matrix. When the eigenvalue spread exceeds `1e12` the matrix is
/// regularized with `1e-12 I`; the second value reports whether that happened.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let m = symmetrize(m);
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let regularize = !(min > 1e-12 * max.abs().max(1e-300));
    let target = if regularize {
        &m + DMatrix::identity(m.nrows(), m.nrows()) * 1e-12
    } else {
        m
    };
    match target.clone().cholesky() {
        Some(ch) => Ok((ch.inverse(), regularize)),
        None => Err(Error::Singular(format!(
            "innovation covariance not positive definite (eigenvalues in [{min:e}, {max:e}])"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_with_sign_convention() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = sorted_eigen(&m);
        assert_eq!(vals, vec![3.0, 1.0]);
        assert_eq!(vecs.column(0)[1], 1.0);
        assert_eq!(vecs.column(1)[0], 1.0);
    }

    #[test]
    fn lyapunov_scalar() {
        let a = DMatrix::from_element(1, 1, 0.9);
        let w = DMatrix::from_element(1, 1, 1.0);
        let x = lyapunov(&a, &w).unwrap();
        assert!((x[(0, 0)] - 1.0 / 0.19).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_matrix_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, -0.2, 0.7]);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let x = lyapunov(&a, &w).unwrap();
        let r = &a * &x * a.transpose() + &w - &x;
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = psd_sqrt(&m);
        assert!((&r * &r - m).amax() < 1e-12);
    }
}
