//! Stationary distributions of small finite Markov chains.

use crate::error::{Error, Result};

pub(crate) const STATIONARY_TOL: f64 = 1e-15;
pub(crate) const STATIONARY_MAX_ITER: usize = 1_000_000;

/// Stationary distribution of the row-stochastic `n x n` matrix `transition` (row-major),
/// by power iteration on the lazy chain `(I + P) / 2`, starting from `start`.
///
/// The lazy chain has the same stationary distributions and is aperiodic, so periodic
/// kernels still converge.
pub(crate) fn stationary(transition: &[f64], n: usize, start: Option<&[f64]>) -> Result<Vec<f64>> {
    debug_assert_eq!(transition.len(), n * n);
    stationary_by(n, start, |pi, next| {
        for (i, &mass) in pi.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let row = &transition[i * n..(i + 1) * n];
            for (nj, &t) in next.iter_mut().zip(row) {
                *nj += mass * t;
            }
        }
    })
}

/// Power iteration where `step(pi, next)` accumulates `pi P` into a zeroed `next`.
pub(crate) fn stationary_by<F>(n: usize, start: Option<&[f64]>, mut step: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut pi = match start {
        Some(s) if s.len() == n && s.iter().sum::<f64>() > 0.0 => s.to_vec(),
        _ => vec![1.0 / n as f64; n],
    };
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITER {
        next.iter_mut().for_each(|v| *v = 0.0);
        step(&pi, &mut next);
        let total: f64 = next.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate("probability mass vanished".into()));
        }
        residual = 0.0;
        for (p, nx) in pi.iter_mut().zip(&next) {
            let v = 0.5 * (*p + nx / total);
            residual = residual.max((v - *p).abs());
            *p = v;
        }
        if residual <= STATIONARY_TOL {
            let s: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|v| *v /= s);
            return Ok(pi);
        }
    }
    Err(Error::NonConvergence {
        iterations: STATIONARY_MAX_ITER,
        residual,
    })
}
