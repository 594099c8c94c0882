//! Monte Carlo simulation of the matched encoder, parallel Gaussian channel and decoder.
//!
//! Per step the encoder forms the innovation `K_t = X_t - C Ẑ_t`, rotates it to
//! `Γ_t = E K_t` and sends `A_i = (η_i / 𝓑_i) Γ_i` over channel `i` with noise variance `q_i`.
//! The decoder outputs `Y_t = C Ẑ_t + E'(𝓑 ⊙ B_t)` and both ends advance the predictor
//! `Ẑ_{t+1} = A Ẑ_t + G (Y_t - C Ẑ_t)`. The per-coordinate error of `Γ` is
//! `(1 - η_i)² λ_i + η_i δ_i = δ_i`, so the end-to-end distortion is `D`.
//!
//! Noise is drawn from ChaCha20 seeded with a `u64`; Gaussian samples use the ziggurat
//! `StandardNormal` of `rand_distr`. Draw order per step: `W` (k), `V` (d), `V^c` (p).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::linalg::psd_sqrt;
use crate::gauss::{
    kalman_gain_and_filter, solve, stationary_covariance, ChannelNoise, GaussMarkovModel, GaussNrdfSolution,
    GaussOptions,
};

pub const DEFAULT_BURN_IN: usize = 1000;
/// State norm treated as divergence.
const DIVERGENCE_NORM: f64 = 1e12;
/// Largest Riccati residual accepted from a solution record.
const MAX_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct RealizationConfig<'a> {
    pub model: &'a GaussMarkovModel,
    pub sol: &'a GaussNrdfSolution,
    /// Total steps, including burn-in.
    pub horizon: usize,
    pub seed: u64,
    pub burn_in: usize,
}

impl<'a> RealizationConfig<'a> {
    pub fn new(model: &'a GaussMarkovModel, sol: &'a GaussNrdfSolution, horizon: usize, seed: u64) -> Self {
        RealizationConfig {
            model,
            sol,
            horizon,
            seed,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = self.model.dims();
        if self.sol.sigma.nrows() != dims.m || self.sol.lambda.nrows() != dims.p {
            return Err(Error::Mismatch("solution does not belong to this model".into()));
        }
        if !(self.sol.diagnostics.riccati_residual <= MAX_RESIDUAL) {
            return Err(Error::domain(format!(
                "solution not converged (Riccati residual {:e})",
                self.sol.diagnostics.riccati_residual
            )));
        }
        if self.horizon <= self.burn_in {
            return Err(Error::domain(format!(
                "horizon {} leaves no samples after burn-in {}",
                self.horizon, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Sample statistics of one or more trajectories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    /// Mean of `‖X_t - Y_t‖²`.
    pub empirical_distortion: f64,
    /// Sample variance of `‖X_t - Y_t‖²`.
    pub distortion_variance: f64,
    /// Mean square channel inputs.
    pub empirical_powers: Vec<f64>,
    /// Channel noise variances `q_i` used by the run.
    pub channel_noise: Vec<f64>,
    pub analytic_rate: f64,
    /// Capacity of the parallel channel at `empirical_powers`.
    pub capacity_at_power: f64,
    pub samples: usize,
    pub target_distortion: f64,
    /// Sample covariance of `Γ_t`, row-major.
    pub innovation_covariance: Vec<f64>,
    /// Lag-1 autocorrelation of each `Γ_{t,i}`.
    pub innovation_lag1: Vec<f64>,
    /// Lag-1 autocorrelation of each coordinate of `Γ̃_t = E (Y_t - C Ẑ_t)`.
    pub decoder_innovation_lag1: Vec<f64>,
    /// Correlation of `Γ_{t,i}` with `Γ̃_{t-1,j}`, row-major in `(i, j)`.
    pub innovation_vs_past_output: Vec<f64>,
    /// Sample `E[K_t K_{t-1}']`, row-major.
    pub innovation_lag1_covariance: Vec<f64>,
}

impl SimReport {
    /// Standard error of `empirical_distortion`.
    pub fn std_error(&self) -> f64 {
        (self.distortion_variance / self.samples as f64).sqrt()
    }

    /// `|empirical - target| <= k` standard errors.
    pub fn within_sigma(&self, k: f64) -> bool {
        (self.empirical_distortion - self.target_distortion).abs() <= k * self.std_error()
    }

    pub fn relative_error(&self) -> f64 {
        (self.empirical_distortion - self.target_distortion).abs() / self.target_distortion
    }

    /// Three standard deviations of a sample correlation between independent white sequences.
    pub fn whiteness_band(&self) -> f64 {
        3.0 / (self.samples as f64).sqrt()
    }

    /// Sample-weighted combination of independent runs of the same configuration.
    pub fn merge(reports: &[SimReport]) -> Result<SimReport> {
        let first = reports.first().ok_or_else(|| Error::domain("nothing to merge"))?;
        let n: usize = reports.iter().map(|r| r.samples).sum();
        let w = |r: &SimReport| r.samples as f64 / n as f64;
        let avg = |f: &dyn Fn(&SimReport) -> &Vec<f64>| {
            let mut out = vec![0.0; f(first).len()];
            for r in reports {
                for (o, v) in out.iter_mut().zip(f(r)) {
                    *o += w(r) * v;
                }
            }
            out
        };
        let mean: f64 = reports.iter().map(|r| w(r) * r.empirical_distortion).sum();
        // pooled variance around the combined mean
        let ss: f64 = reports
            .iter()
            .map(|r| {
                let k = r.samples as f64;
                (k - 1.0) * r.distortion_variance + k * (r.empirical_distortion - mean).powi(2)
            })
            .sum();
        let powers = avg(&|r| &r.empirical_powers);
        Ok(SimReport {
            empirical_distortion: mean,
            distortion_variance: ss / (n as f64 - 1.0),
            capacity_at_power: capacity(&powers, &first.channel_noise)?,
            empirical_powers: powers,
            channel_noise: first.channel_noise.clone(),
            analytic_rate: first.analytic_rate,
            samples: n,
            target_distortion: first.target_distortion,
            innovation_covariance: avg(&|r| &r.innovation_covariance),
            innovation_lag1: avg(&|r| &r.innovation_lag1),
            decoder_innovation_lag1: avg(&|r| &r.decoder_innovation_lag1),
            innovation_vs_past_output: avg(&|r| &r.innovation_vs_past_output),
            innovation_lag1_covariance: avg(&|r| &r.innovation_lag1_covariance),
        })
    }
}

/// `1/2 Σ log2(1 + P_i / q_i)`.
pub fn capacity(powers: &[f64], q: &[f64]) -> Result<f64> {
    if powers.len() != q.len() {
        return Err(Error::domain("power and noise lists differ in length"));
    }
    if powers.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::domain("channel powers must be nonnegative"));
    }
    if q.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::domain("channel noise variances must be positive"));
    }
    Ok(powers.iter().zip(q).map(|(p, q)| 0.5 * (1.0 + p / q).log2()).sum())
}

/// Analytic `E[K_t K_{t-1}']` of the encoder innovation, `C (A Σ C' - G E'HE Λ)`.
pub fn innovation_lag1_covariance(model: &GaussMarkovModel, sol: &GaussNrdfSolution) -> Result<DMatrix<f64>> {
    let filter = kalman_gain_and_filter(sol, model)?;
    let c = model.c();
    Ok(c * (model.a() * &sol.sigma * c.transpose() - &filter.gain * sol.rotated_gain() * &sol.lambda))
}

fn normals(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

#[derive(Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }
}

pub fn simulate(cfg: &RealizationConfig) -> Result<SimReport> {
    run(cfg, None)
}

/// As [`simulate`], also writing one CSV row per step
/// (`t, x_*, y_*, distortion, a_*`).
pub fn simulate_with_trace(cfg: &RealizationConfig, trace: &mut dyn Write) -> Result<SimReport> {
    run(cfg, Some(trace))
}

/// Independent runs with the given seeds, merged.
pub fn simulate_replications(cfg: &RealizationConfig, seeds: &[u64]) -> Result<SimReport> {
    let reports = seeds
        .par_iter()
        .map(|&seed| simulate(&RealizationConfig { seed, ..*cfg }))
        .collect::<Result<Vec<_>>>()?;
    SimReport::merge(&reports)
}

fn run(cfg: &RealizationConfig, mut trace: Option<&mut dyn Write>) -> Result<SimReport> {
    cfg.validate()?;
    let (model, sol) = (cfg.model, cfg.sol);
    let dims = model.dims();
    let (m, p) = (dims.m, dims.p);
    let filter = kalman_gain_and_filter(sol, model)?;
    let (a, b, c, n) = (model.a(), model.b(), model.c(), model.n());
    let e = &sol.e;
    let et = e.transpose();
    let eta: Vec<f64> = sol.h.diagonal().iter().copied().collect();
    let bcal: Vec<f64> = sol.bcal.diagonal().iter().copied().collect();
    let q = sol.channel_noise();
    let q_sd: Vec<f64> = q.iter().map(|v| v.sqrt()).collect();
    let enc: Vec<f64> = eta
        .iter()
        .zip(&bcal)
        .map(|(&h, &bc)| if bc > 0.0 { h / bc } else { 0.0 })
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (mut z, mut z_hat) = if model.is_stable() {
        let stat = stationary_covariance(model)?;
        let est = psd_sqrt(&(&stat - &sol.sigma)) * normals(&mut rng, m);
        let err = psd_sqrt(&sol.sigma) * normals(&mut rng, m);
        (&est + err, est)
    } else {
        (DVector::zeros(m), DVector::zeros(m))
    };

    if let Some(w) = trace.as_deref_mut() {
        let mut header = vec!["t".to_string()];
        header.extend((0..p).map(|i| format!("x{i}")));
        header.extend((0..p).map(|i| format!("y{i}")));
        header.push("distortion".into());
        header.extend((0..p).map(|i| format!("a{i}")));
        writeln!(w, "{}", header.join(","))?;
    }

    let mut dist = Moments::default();
    let mut power = vec![0.0; p];
    let mut gg = DMatrix::<f64>::zeros(p, p);
    let mut kk_lag = DMatrix::<f64>::zeros(p, p);
    let mut g_lag = vec![0.0; p];
    let mut gt_sq = vec![0.0; p];
    let mut gt_lag = vec![0.0; p];
    let mut cross = DMatrix::<f64>::zeros(p, p);
    let mut prev: Option<(DVector<f64>, DVector<f64>, DVector<f64>)> = None;
    let mut input = DVector::zeros(p);

    for t in 0..cfg.horizon {
        let w = normals(&mut rng, dims.k);
        let v = normals(&mut rng, dims.d);
        let vc = normals(&mut rng, p);

        let x = c * &z + n * v;
        let pred = c * &z_hat;
        let k = &x - &pred;
        let gamma = e * &k;
        for i in 0..p {
            input[i] = enc[i] * gamma[i];
        }
        let gamma_out = DVector::from_iterator(p, (0..p).map(|i| bcal[i] * (input[i] + q_sd[i] * vc[i])));
        let y = &pred + &et * &gamma_out;
        let err = (&x - &y).norm_squared();

        if t >= cfg.burn_in {
            dist.push(err);
            for i in 0..p {
                power[i] += input[i] * input[i];
            }
            gg += &gamma * gamma.transpose();
            for i in 0..p {
                gt_sq[i] += gamma_out[i] * gamma_out[i];
            }
            if let Some((k_prev, g_prev, gt_prev)) = &prev {
                kk_lag += &k * k_prev.transpose();
                for i in 0..p {
                    g_lag[i] += gamma[i] * g_prev[i];
                    gt_lag[i] += gamma_out[i] * gt_prev[i];
                }
                cross += &gamma * gt_prev.transpose();
            }
            prev = Some((k, gamma, gamma_out.clone()));
        }
        if let Some(wr) = trace.as_deref_mut() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            row.extend(y.iter().map(|v| v.to_string()));
            row.push(err.to_string());
            row.extend(input.iter().map(|v| v.to_string()));
            writeln!(wr, "{}", row.join(","))?;
        }

        z_hat = filter.predict(&z_hat, &y);
        z = a * &z + b * w;
        if !(z.norm() < DIVERGENCE_NORM && z_hat.norm() < DIVERGENCE_NORM) {
            return Err(Error::Divergence { step: t });
        }
    }

    let samples = dist.n;
    let ns = samples as f64;
    let powers: Vec<f64> = power.iter().map(|v| v / ns).collect();
    gg /= ns;
    let pairs = (samples - 1).max(1) as f64;
    kk_lag /= pairs;
    let corr = |lag: f64, sq: f64| if sq > 0.0 { (lag / pairs) / (sq / ns) } else { 0.0 };
    let innovation_lag1 = (0..p).map(|i| corr(g_lag[i], gg[(i, i)] * ns)).collect();
    let decoder_innovation_lag1 = (0..p).map(|i| corr(gt_lag[i], gt_sq[i])).collect();
    let mut innovation_vs_past_output = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            let scale = (gg[(i, i)] * gt_sq[j] / ns).sqrt();
            innovation_vs_past_output.push(if scale > 0.0 { cross[(i, j)] / pairs / scale } else { 0.0 });
        }
    }
    let row_major = |mat: &DMatrix<f64>| mat.transpose().as_slice().to_vec();
    Ok(SimReport {
        empirical_distortion: dist.mean,
        distortion_variance: dist.m2 / (ns - 1.0).max(1.0),
        capacity_at_power: capacity(&powers, &q)?,
        empirical_powers: powers,
        channel_noise: q,
        analytic_rate: sol.rate,
        samples,
        target_distortion: sol.distortion.min(sol.alloc.total_power()),
        innovation_covariance: row_major(&gg),
        innovation_lag1,
        decoder_innovation_lag1,
        innovation_vs_past_output,
        innovation_lag1_covariance: row_major(&kk_lag),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchingOptions {
    pub gauss: GaussOptions,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for MatchingOptions {
    fn default() -> Self {
        MatchingOptions {
            gauss: GaussOptions::default(),
            horizon: 100_000,
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingReport {
    pub rate: f64,
    /// Capacity at the analytic powers `λ_i - δ_i` with `q_i = δ_i`.
    pub capacity: f64,
    /// `capacity - rate`.
    pub gap: f64,
    pub powers: Vec<f64>,
    pub simulation: SimReport,
}

impl MatchingReport {
    pub fn distortion_consistent(&self) -> bool {
        self.simulation.within_sigma(3.0)
    }
}

/// Solves with the default channel noise, checks the capacity identity analytically and the
/// distortion by simulation.
pub fn matching_check(model: &GaussMarkovModel, d: f64, opts: &MatchingOptions) -> Result<MatchingReport> {
    let sol = solve(model, d, &ChannelNoise::MatchDistortion, &opts.gauss)?;
    let powers = sol.channel_powers();
    let cap = capacity(&powers, &sol.channel_noise())?;
    let cfg = RealizationConfig {
        model,
        sol: &sol,
        horizon: opts.horizon,
        seed: opts.seed,
        burn_in: opts.burn_in,
    };
    let simulation = simulate(&cfg)?;
    Ok(MatchingReport {
        rate: sol.rate,
        capacity: cap,
        gap: cap - sol.rate,
        powers,
        simulation,
    })
}
