use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::linalg::{min_eigenvalue, sorted_eigen, spd_inverse, spectral_radius, sym_norm, symmetrize};
use super::GaussMarkovModel;
use crate::error::{Error, Result};
use crate::info::{reverse_waterfill, waterfill_rate, WaterfillAllocation};

/// Allowed negative excursion of the smallest eigenvalue of an iterate, relative to its norm.
const PSD_SLACK: f64 = 1e-10;
const KALMAN_INIT_MAX_ITER: usize = 10_000;

/// Covariance of the parallel channel noise `V^c`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ChannelNoise {
    /// `q_i = δ_i`, so the channel input powers are `λ_i - δ_i`.
    #[default]
    MatchDistortion,
    /// Fixed positive diagonal.
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussOptions {
    /// Stop when `‖Σ⁺ - Σ‖ <= tol * max(1, ‖Σ‖)` in spectral norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Average consecutive iterates once the residual has grown twice in a row.
    pub auto_damping: bool,
}

impl Default for GaussOptions {
    fn default() -> Self {
        GaussOptions {
            tol: 1e-13,
            max_iter: 200_000,
            auto_damping: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    /// `‖F(Σ) - Σ‖` in spectral norm at the returned `Σ`.
    pub riccati_residual: f64,
    /// The innovation covariance restricted to the active directions needed `1e-12 I`.
    pub regularized: bool,
    pub damped: bool,
    pub min_sigma_eigenvalue: f64,
}

/// Stationary fixed point for a target distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussNrdfSolution {
    /// One-step prediction error covariance of the state.
    pub sigma: DMatrix<f64>,
    /// `C Σ C' + N N'`.
    pub lambda: DMatrix<f64>,
    /// Rows are the eigenvectors of `lambda`, so `E Λ E' = diag(eigs)`.
    pub e: DMatrix<f64>,
    /// Descending.
    pub eigs: Vec<f64>,
    pub alloc: WaterfillAllocation,
    /// `diag(1 - δ_i / λ_i)`.
    pub h: DMatrix<f64>,
    /// `sqrt(H Δ Q^{-1})`.
    pub bcal: DMatrix<f64>,
    /// Innovation covariance of the reproduction.
    pub m: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Bits per sample.
    pub rate: f64,
    pub distortion: f64,
    pub diagnostics: SolveDiagnostics,
}

impl GaussNrdfSolution {
    pub fn deltas(&self) -> &[f64] {
        &self.alloc.allocations
    }

    pub fn water_level(&self) -> f64 {
        self.alloc.water_level
    }

    /// `E' H E`.
    pub fn rotated_gain(&self) -> DMatrix<f64> {
        self.e.transpose() * &self.h * &self.e
    }

    /// Channel input powers `(λ_i - δ_i) q_i / δ_i`, which reduce to `λ_i - δ_i` for the default noise.
    pub fn channel_powers(&self) -> Vec<f64> {
        self.eigs
            .iter()
            .zip(self.deltas())
            .enumerate()
            .map(|(i, (&l, &d))| if d < l && d > 0.0 { (l - d) * self.q[(i, i)] / d } else { 0.0 })
            .collect()
    }

    pub fn channel_noise(&self) -> Vec<f64> {
        self.q.diagonal().iter().copied().collect()
    }

    pub fn is_zero_rate(&self) -> bool {
        self.h.iter().all(|v| *v == 0.0)
    }
}

/// Every quantity one pass of the fixed-point map derives from `Σ`.
struct Pass {
    lambda: DMatrix<f64>,
    e: DMatrix<f64>,
    eigs: Vec<f64>,
    alloc: WaterfillAllocation,
    h: DMatrix<f64>,
    bcal: DMatrix<f64>,
    q: DMatrix<f64>,
    m: DMatrix<f64>,
    gain: DMatrix<f64>,
    next: DMatrix<f64>,
    regularized: bool,
}

fn pass(model: &GaussMarkovModel, sigma: &DMatrix<f64>, d: f64, noise: &ChannelNoise) -> Result<Pass> {
    let (a, c) = (model.a(), model.c());
    let p = c.nrows();
    let nn = model.observation_noise();
    let lambda = symmetrize(&(c * sigma * c.transpose() + &nn));
    let (eigs, vectors) = sorted_eigen(&lambda);
    let eigs: Vec<f64> = eigs.into_iter().map(|v| v.max(0.0)).collect();
    let e = vectors.transpose();
    let alloc = reverse_waterfill(&eigs, d)?;
    let eta = alloc.gains();
    let deltas = &alloc.allocations;

    let q_diag: Vec<f64> = match noise {
        ChannelNoise::MatchDistortion => deltas.iter().map(|&v| if v > 0.0 { v } else { 1.0 }).collect(),
        ChannelNoise::Diagonal(q) => q.clone(),
    };
    let bcal_diag: Vec<f64> = (0..p).map(|i| (eta[i] * deltas[i] / q_diag[i]).sqrt()).collect();
    let h = DMatrix::from_diagonal(&DVector::from_vec(eta.clone()));
    let bcal = DMatrix::from_diagonal(&DVector::from_vec(bcal_diag.clone()));
    let q = DMatrix::from_diagonal(&DVector::from_vec(q_diag));

    let et = e.transpose();
    let e_tilde = &et * &h * &e;
    let obs = &e_tilde * c;
    let m = symmetrize(
        &(&obs * sigma * obs.transpose()
            + &e_tilde * &nn * e_tilde.transpose()
            + &et * &bcal * &q * bcal.transpose() * &e),
    );

    // Directions with η_i = 0 carry nothing: in rotated coordinates `M` is zero on those rows
    // and columns, so the gain only needs the inverse of the active block.
    let active: Vec<usize> = (0..p).filter(|&i| eta[i] > 0.0).collect();
    let (gain, regularized) = if active.is_empty() {
        (DMatrix::zeros(a.nrows(), p), false)
    } else {
        let m_rot = &e * &m * &et;
        let block = DMatrix::from_fn(active.len(), active.len(), |i, j| m_rot[(active[i], active[j])]);
        let (block_inv, regularized) = spd_inverse(&block)?;
        let mut inv_rot = DMatrix::zeros(p, p);
        for (i, &ai) in active.iter().enumerate() {
            for (j, &aj) in active.iter().enumerate() {
                inv_rot[(ai, aj)] = block_inv[(i, j)];
            }
        }
        let m_pinv = &et * inv_rot * &e;
        (a * sigma * obs.transpose() * m_pinv, regularized)
    };

    let next = symmetrize(&(a * sigma * a.transpose() - &gain * &m * gain.transpose() + model.process_noise()));
    Ok(Pass {
        lambda,
        e,
        eigs,
        alloc,
        h,
        bcal,
        q,
        m,
        gain,
        next,
        regularized,
    })
}

/// Steady state of the ordinary one-step Kalman predictor, used as the starting point.
fn kalman_start(model: &GaussMarkovModel) -> DMatrix<f64> {
    let (a, c) = (model.a(), model.c());
    let (bb, nn) = (model.process_noise(), model.observation_noise());
    let mut sigma = DMatrix::identity(a.nrows(), a.nrows());
    for _ in 0..KALMAN_INIT_MAX_ITER {
        let s = c * &sigma * c.transpose() + &nn;
        let Ok((s_inv, _)) = spd_inverse(&s) else {
            break;
        };
        let k = a * &sigma * c.transpose();
        let next = symmetrize(&(a * &sigma * a.transpose() - &k * s_inv * k.transpose() + &bb));
        let change = sym_norm(&(&next - &sigma));
        sigma = next;
        if change <= 1e-13 * sym_norm(&sigma).max(1.0) {
            break;
        }
    }
    sigma
}

fn check_noise(noise: &ChannelNoise, p: usize) -> Result<()> {
    if let ChannelNoise::Diagonal(q) = noise {
        if q.len() != p {
            return Err(Error::domain(format!("Q has {} entries, expected {p}", q.len())));
        }
        if q.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::domain("Q must be positive definite"));
        }
    }
    Ok(())
}

/// Solves the coupled eigendecomposition, reverse waterfilling and modified Riccati fixed point.
pub fn solve(model: &GaussMarkovModel, d: f64, noise: &ChannelNoise, opts: &GaussOptions) -> Result<GaussNrdfSolution> {
    model.check_assumptions()?;
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::domain(format!("distortion {d} must be positive")));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::domain("tol and max_iter must be positive"));
    }
    check_noise(noise, model.dims().p)?;

    let mut sigma = kalman_start(model);
    let mut damped = false;
    let mut prev = f64::INFINITY;
    let mut rises = 0;
    let mut regularized = false;
    let mut last = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let step = pass(model, &sigma, d, noise)?;
        regularized |= step.regularized;
        let residual = sym_norm(&(&step.next - &sigma));
        if !residual.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                residual,
            });
        }
        last = residual;
        if opts.auto_damping && !damped {
            rises = if residual > prev { rises + 1 } else { 0 };
            damped = rises >= 2;
        }
        prev = residual;
        let scale = sym_norm(&sigma).max(1.0);
        sigma = if damped {
            (&sigma + &step.next) * 0.5
        } else {
            step.next
        };
        let min_eig = min_eigenvalue(&sigma);
        if min_eig < -PSD_SLACK * scale {
            return Err(Error::Degenerate(format!(
                "iterate {it} lost positive semidefiniteness (min eigenvalue {min_eig:e})"
            )));
        }
        if residual <= opts.tol * scale {
            return finish(model, sigma, d, noise, it, damped, regularized);
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual: last,
    })
}

fn finish(
    model: &GaussMarkovModel,
    sigma: DMatrix<f64>,
    d: f64,
    noise: &ChannelNoise,
    iterations: usize,
    damped: bool,
    regularized: bool,
) -> Result<GaussNrdfSolution> {
    let step = pass(model, &sigma, d, noise)?;
    let riccati_residual = sym_norm(&(&step.next - &sigma));
    let rate = waterfill_rate(&step.alloc)?;
    Ok(GaussNrdfSolution {
        diagnostics: SolveDiagnostics {
            iterations,
            riccati_residual,
            regularized: regularized || step.regularized,
            damped,
            min_sigma_eigenvalue: min_eigenvalue(&sigma),
        },
        sigma,
        lambda: step.lambda,
        e: step.e,
        eigs: step.eigs,
        alloc: step.alloc,
        h: step.h,
        bcal: step.bcal,
        m: step.m,
        q: step.q,
        rate,
        distortion: d,
    })
}

/// Coefficients of the reproduction-driven predictor `Ẑ⁺ = A Ẑ + G (Y - C Ẑ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorFilter {
    pub gain: DMatrix<f64>,
    pub transition: DMatrix<f64>,
    pub observation: DMatrix<f64>,
    /// `A - G E' H E C`, the error dynamics.
    pub closed_loop: DMatrix<f64>,
    pub spectral_radius: f64,
}

impl PredictorFilter {
    pub fn is_stable(&self) -> bool {
        self.spectral_radius < 1.0
    }

    pub fn predict(&self, z_hat: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let innovation = y - &self.observation * z_hat;
        &self.transition * z_hat + &self.gain * innovation
    }
}

pub fn kalman_gain_and_filter(sol: &GaussNrdfSolution, model: &GaussMarkovModel) -> Result<PredictorFilter> {
    let dims = model.dims();
    if sol.sigma.nrows() != dims.m || sol.lambda.nrows() != dims.p {
        return Err(Error::Mismatch("solution does not belong to this model".into()));
    }
    let noise = ChannelNoise::Diagonal(sol.channel_noise());
    let step = pass(model, &sol.sigma, sol.distortion, &noise)?;
    let closed_loop = model.a() - &step.gain * sol.rotated_gain() * model.c();
    Ok(PredictorFilter {
        spectral_radius: spectral_radius(&closed_loop),
        gain: step.gain,
        transition: model.a().clone(),
        observation: model.c().clone(),
        closed_loop,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RdPoint {
    pub distortion: f64,
    pub rate: f64,
    pub riccati_residual: f64,
    pub iterations: usize,
}

/// Solves every grid point independently, in parallel.
pub fn rd_curve(
    model: &GaussMarkovModel,
    grid: &[f64],
    noise: &ChannelNoise,
    opts: &GaussOptions,
) -> Result<Vec<RdPoint>> {
    if grid.is_empty() {
        return Err(Error::domain("empty distortion grid"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("distortion grid must be strictly ascending"));
    }
    grid.par_iter()
        .map(|&d| {
            let sol = solve(model, d, noise, opts)?;
            Ok(RdPoint {
                distortion: d,
                rate: sol.rate,
                riccati_residual: sol.diagnostics.riccati_residual,
                iterations: sol.diagnostics.iterations,
            })
        })
        .collect()
}
