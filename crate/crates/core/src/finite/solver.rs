use serde::Serialize;

use super::{DistortionMatrix, FiniteKernelPair, FiniteMarkovSource, SolverOptions};
use crate::chain;
use crate::error::{Error, Result};
use crate::info::{entropy_nats, Unit};

/// Most negative tilt tried while bracketing a target distortion.
const S_FLOOR: f64 = -4096.0;
const MAX_BISECTIONS: usize = 400;

/// Converged stationary operating point of the alternating iteration.
#[derive(Debug, Clone, Serialize)]
pub struct RateSolution {
    pub kernel: FiniteKernelPair,
    /// Stationary law of `(X_t, C_t)`, indexed `x * contexts + c`, where `C_t` is the context
    /// ending in `Y_t`.
    pub joint: Vec<f64>,
    /// `E ρ(X_t, Y_t)`.
    pub distortion: f64,
    /// `H(Y_t | C_{t-1}) - H(Y_t | X_t, C_{t-1})` in bits.
    pub rate: f64,
    /// `s D - E log Z(C_{t-1}, X_t)` in bits; equals `rate` at a fixed point.
    pub rate_tilt_form: f64,
    pub iterations: usize,
    /// Last sup-norm change of `ν`.
    pub residual: f64,
    /// Set by [`solve_for_distortion`].
    pub target_distortion: Option<f64>,
}

struct Stats {
    distortion: f64,
    rate_nats: f64,
    tilt_form_nats: f64,
    induced_nu: Vec<f64>,
    context_mass: Vec<f64>,
}

fn stationary_joint(
    source: &FiniteMarkovSource,
    kernel: &FiniteKernelPair,
    start: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let (k, l, nc) = (kernel.source_size, kernel.output_size, kernel.contexts);
    chain::stationary_by(k * nc, start, |pi, next| {
        for xp in 0..k {
            for cp in 0..nc {
                let mass = pi[xp * nc + cp];
                if mass == 0.0 {
                    continue;
                }
                for x in 0..k {
                    let mt = mass * source.transition(xp, x);
                    if mt == 0.0 {
                        continue;
                    }
                    for y in 0..l {
                        next[x * nc + kernel.push(cp, y)] += mt * kernel.q(cp, x, y);
                    }
                }
            }
        }
    })
}

fn stats(source: &FiniteMarkovSource, kernel: &FiniteKernelPair, joint: &[f64]) -> Stats {
    let (k, l, nc) = (kernel.source_size, kernel.output_size, kernel.contexts);
    let rho = &kernel.distortion_matrix;

    // a[c' * k + x] = P(C_{t-1} = c', X_t = x)
    let mut a = vec![0.0; nc * k];
    for xp in 0..k {
        for cp in 0..nc {
            let mass = joint[xp * nc + cp];
            for x in 0..k {
                a[cp * k + x] += mass * source.transition(xp, x);
            }
        }
    }

    let mut distortion = 0.0;
    let mut h_full = 0.0;
    let mut log_z = 0.0;
    let mut induced = vec![0.0; nc * l];
    let mut context_mass = vec![0.0; nc];
    for cp in 0..nc {
        for x in 0..k {
            let w = a[cp * k + x];
            if w == 0.0 {
                continue;
            }
            context_mass[cp] += w;
            let row: Vec<f64> = (0..l).map(|y| kernel.q(cp, x, y)).collect();
            h_full += w * entropy_nats(&row);
            log_z += w * kernel.z(cp, x).ln();
            for (y, &qy) in row.iter().enumerate() {
                induced[cp * l + y] += w * qy;
                distortion += w * qy * rho.get(x, y);
            }
        }
    }
    let mut h_prev = 0.0;
    for cp in 0..nc {
        let m = context_mass[cp];
        if m == 0.0 {
            continue;
        }
        let slice = &mut induced[cp * l..(cp + 1) * l];
        h_prev += entropy_nats(slice) - entropy_nats(&[m]);
        slice.iter_mut().for_each(|v| *v /= m);
    }
    Stats {
        distortion,
        rate_nats: h_prev - h_full,
        tilt_form_nats: kernel.s * distortion - log_z,
        induced_nu: induced,
        context_mass,
    }
}

fn finish(
    source: &FiniteMarkovSource,
    kernel: FiniteKernelPair,
    joint: Vec<f64>,
    iterations: usize,
    residual: f64,
) -> RateSolution {
    let st = stats(source, &kernel, &joint);
    RateSolution {
        distortion: st.distortion,
        rate: Unit::Bits.from_nats(st.rate_nats).max(0.0),
        rate_tilt_form: Unit::Bits.from_nats(st.tilt_form_nats),
        kernel,
        joint,
        iterations,
        residual,
        target_distortion: None,
    }
}

fn check_problem(source: &FiniteMarkovSource, rho: &DistortionMatrix, s: f64) -> Result<()> {
    if rho.source_size() != source.alphabet_size() {
        return Err(Error::domain(format!(
            "distortion matrix has {} rows but the source alphabet has {} symbols",
            rho.source_size(),
            source.alphabet_size()
        )));
    }
    if !(s <= 0.0) {
        return Err(Error::domain(format!("tilt s = {s} must be nonpositive")));
    }
    Ok(())
}

/// Alternating fixed-point iteration at a fixed tilt `s <= 0`, starting from a uniform `ν`.
pub fn solve_stationary(
    source: &FiniteMarkovSource,
    rho: &DistortionMatrix,
    s: f64,
    opts: &SolverOptions,
) -> Result<RateSolution> {
    check_problem(source, rho, s)?;
    opts.validate()?;
    let l = rho.output_size();
    let contexts = l.pow(opts.memory as u32);
    let mut nu = vec![1.0 / l as f64; contexts * l];
    let mut joint: Option<Vec<f64>> = None;
    let mut residual = f64::INFINITY;

    for it in 1..=opts.max_iter {
        let kernel = FiniteKernelPair::tilt(rho, nu.clone(), opts.memory, s);
        let pi = stationary_joint(source, &kernel, joint.as_deref())?;
        let st = stats(source, &kernel, &pi);
        if let Some(c) = st.context_mass.iter().position(|&m| m <= 0.0) {
            return Err(Error::Degenerate(format!(
                "output context {c} has zero stationary probability at s = {s}"
            )));
        }
        residual = st
            .induced_nu
            .iter()
            .zip(&nu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        for (n, new) in nu.iter_mut().zip(&st.induced_nu) {
            *n += opts.damping * (new - *n);
        }
        joint = Some(pi);
        if residual < opts.tol {
            let kernel = FiniteKernelPair::tilt(rho, nu, opts.memory, s);
            let pi = stationary_joint(source, &kernel, joint.as_deref())?;
            return Ok(finish(source, kernel, pi, it, residual));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Finds `s <= 0` with `D(s)` within `opts.distortion_tol` of `d_target` by bisection and
/// returns the solution at that tilt.
///
/// The returned solution always satisfies `distortion <= d_target`. Targets at or above the
/// distortion reached at `s = 0` give the zero-rate solution at `s = 0`.
pub fn solve_for_distortion(
    source: &FiniteMarkovSource,
    rho: &DistortionMatrix,
    d_target: f64,
    opts: &SolverOptions,
) -> Result<RateSolution> {
    if !(d_target >= 0.0) || !d_target.is_finite() {
        return Err(Error::domain(format!("target distortion {d_target} must be nonnegative")));
    }
    let tagged = |mut sol: RateSolution| {
        sol.target_distortion = Some(d_target);
        sol
    };

    let at_zero = solve_stationary(source, rho, 0.0, opts)?;
    if d_target >= at_zero.distortion {
        return Ok(tagged(at_zero));
    }

    let (mut lo, mut hi) = (-1.0_f64, 0.0_f64);
    let mut sol_lo = solve_stationary(source, rho, lo, opts)?;
    while sol_lo.distortion > d_target {
        hi = lo;
        lo *= 2.0;
        if lo < S_FLOOR {
            return Err(Error::Bracket(format!(
                "distortion {d_target} not reached for s >= {S_FLOOR} (D = {})",
                sol_lo.distortion
            )));
        }
        sol_lo = solve_stationary(source, rho, lo, opts)?;
    }

    for _ in 0..MAX_BISECTIONS {
        if d_target - sol_lo.distortion <= opts.distortion_tol {
            return Ok(tagged(sol_lo));
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let sol_mid = solve_stationary(source, rho, mid, opts)?;
        if sol_mid.distortion > d_target {
            hi = mid;
        } else {
            lo = mid;
            sol_lo = sol_mid;
        }
    }
    Err(Error::Bracket(format!(
        "bisection on s stalled in [{lo}, {hi}] with D = {} for target {d_target}",
        sol_lo.distortion
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsms::{nrdf, BinaryMarkovSource};
    use crate::info::{h2, ProbValue};

    fn bsms(p: f64) -> FiniteMarkovSource {
        FiniteMarkovSource::from(&BinaryMarkovSource::new(p).unwrap())
    }

    fn closed_form(p: f64, d: f64) -> f64 {
        nrdf(&BinaryMarkovSource::new(p).unwrap(), ProbValue::new(d).unwrap())
    }

    #[test]
    fn zero_tilt_decouples() {
        let src = bsms(0.3);
        let rho = DistortionMatrix::hamming(2);
        let sol = solve_stationary(&src, &rho, 0.0, &SolverOptions::default()).unwrap();
        assert!(sol.rate.abs() < 1e-12);
        assert!((sol.distortion - 0.5).abs() < 1e-12);
        for c in 0..2 {
            for x in 0..2 {
                for y in 0..2 {
                    assert_eq!(sol.kernel.q(c, x, y), sol.kernel.nu(c, y));
                }
            }
        }
    }

    #[test]
    fn matches_closed_form_at_fixed_tilt() {
        // For Hamming distortion the optimal tilt is s = ln(D / (1 - D)).
        let src = bsms(0.3);
        let rho = DistortionMatrix::hamming(2);
        let s = (0.15f64 / 0.85).ln();
        let sol = solve_stationary(&src, &rho, s, &SolverOptions::default()).unwrap();
        assert!((sol.distortion - 0.15).abs() < 1e-8);
        assert!((sol.rate - 0.332_842_884_539_091_8).abs() < 1e-3);
        assert!((sol.rate - sol.rate_tilt_form).abs() < 1e-8);
    }

    #[test]
    fn tilt_shape_holds() {
        let src = bsms(0.2);
        let rho = DistortionMatrix::hamming(2);
        let sol = solve_stationary(&src, &rho, -2.0, &SolverOptions::default()).unwrap();
        let k = &sol.kernel;
        for c in 0..k.contexts {
            for x in 0..2 {
                let g: Vec<f64> = (0..2)
                    .map(|y| k.q(c, x, y).ln() - k.nu(c, y).ln() - k.s * rho.get(x, y))
                    .collect();
                assert!((g[0] - g[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iid_uniform_is_classical() {
        let src = FiniteMarkovSource::iid(&[0.5, 0.5]).unwrap();
        let rho = DistortionMatrix::hamming(2);
        let sol = solve_for_distortion(&src, &rho, 0.25, &SolverOptions::default()).unwrap();
        assert!((sol.rate - 0.188_721_875_540_867_1).abs() < 1e-6);
    }

    #[test]
    fn distortion_targets() {
        let rho = DistortionMatrix::hamming(2);
        let opts = SolverOptions::default();
        let sol = solve_for_distortion(&bsms(0.25), &rho, 0.1, &opts).unwrap();
        assert!(sol.distortion <= 0.1 && 0.1 - sol.distortion <= 1e-9);
        assert!((sol.rate - 0.412_295_305_641_411_4).abs() < 1e-6);

        let sol = solve_for_distortion(&bsms(0.5), &rho, 0.2, &opts).unwrap();
        assert!((sol.rate - (1.0 - h2(0.2).unwrap())).abs() < 1e-6);

        let sol = solve_for_distortion(&bsms(0.25), &rho, 0.5, &opts).unwrap();
        assert_eq!(sol.kernel.s, 0.0);
        assert!(sol.rate.abs() < 1e-12);
    }

    #[test]
    fn zero_distortion_gives_entropy_rate() {
        let rho = DistortionMatrix::hamming(2);
        let sol = solve_for_distortion(&bsms(0.25), &rho, 0.0, &SolverOptions::default()).unwrap();
        assert!((sol.rate - h2(0.25).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let rho = DistortionMatrix::hamming(3);
        let opts = SolverOptions::default();
        assert!(matches!(solve_stationary(&bsms(0.2), &rho, -1.0, &opts), Err(Error::Domain(_))));
        let rho = DistortionMatrix::hamming(2);
        assert!(matches!(solve_stationary(&bsms(0.2), &rho, 0.5, &opts), Err(Error::Domain(_))));
        assert!(solve_for_distortion(&bsms(0.2), &rho, -0.1, &opts).is_err());
        let bad = SolverOptions { damping: 0.0, ..opts };
        assert!(solve_stationary(&bsms(0.2), &rho, -1.0, &bad).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let rho = DistortionMatrix::hamming(2);
        let opts = SolverOptions {
            max_iter: 2,
            tol: 1e-14,
            ..SolverOptions::default()
        };
        let err = solve_stationary(&bsms(0.1), &rho, -0.3, &opts).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 2, .. }));
    }

    #[test]
    fn damping_reaches_same_point() {
        let rho = DistortionMatrix::hamming(2);
        let src = bsms(0.35);
        let plain = solve_stationary(&src, &rho, -1.5, &SolverOptions::default()).unwrap();
        let damped = SolverOptions {
            damping: 0.5,
            ..SolverOptions::default()
        };
        let damped = solve_stationary(&src, &rho, -1.5, &damped).unwrap();
        assert!((plain.rate - damped.rate).abs() < 1e-8);
    }

    #[test]
    fn longer_memory_agrees_for_bsms() {
        // The optimal output process is first-order Markov, so extra memory changes nothing.
        let rho = DistortionMatrix::hamming(2);
        let src = bsms(0.25);
        let s = (0.1f64 / 0.9).ln();
        let opts = SolverOptions {
            memory: 2,
            ..SolverOptions::default()
        };
        let sol = solve_stationary(&src, &rho, s, &opts).unwrap();
        assert!((sol.rate - closed_form(0.25, sol.distortion)).abs() < 1e-6);
    }

    #[test]
    fn ternary_source_runs() {
        let src = FiniteMarkovSource::new(&[
            vec![0.8, 0.1, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.25, 0.25, 0.5],
        ])
        .unwrap();
        let rho = DistortionMatrix::hamming(3);
        let opts = SolverOptions::default();
        let sol = solve_for_distortion(&src, &rho, 0.2, &opts).unwrap();
        assert!(sol.rate > 0.0);
        assert!((sol.rate - sol.rate_tilt_form).abs() < 1e-7);
    }
}
