//! Binary symmetric Markov source with Hamming distortion.
//!
//! Closed-form nonanticipative RDF, its optimal reproduction kernel, the classical RDF on the
//! low-distortion region where it is known exactly, the Shannon lower bound, and the resulting
//! bound on the rate loss of causal codes.

use serde::Serialize;

use crate::chain;
use crate::error::{Error, Result};
use crate::info::{binary_entropy, entropy_nats, ProbValue, Unit};

/// Source that flips its previous symbol with probability `p` at every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryMarkovSource {
    p: ProbValue,
}

impl BinaryMarkovSource {
    /// Endpoints `p = 0` and `p = 1` are rejected.
    pub fn new(p: f64) -> Result<Self> {
        let p = ProbValue::new(p)?;
        if p.get() <= 0.0 || p.get() >= 1.0 {
            return Err(Error::domain(format!(
                "flip probability {} must lie strictly between 0 and 1",
                p.get()
            )));
        }
        Ok(BinaryMarkovSource { p })
    }

    pub fn p(&self) -> f64 {
        self.p.get()
    }

    /// `min(p, 1 - p)`: the flip probability after relabeling so that it is at most 1/2.
    pub fn q(&self) -> f64 {
        self.p().min(1.0 - self.p())
    }

    /// Row-stochastic transition matrix `P(x_t | x_{t-1})`, row-major.
    pub fn transition(&self) -> [f64; 4] {
        let p = self.p();
        [1.0 - p, p, p, 1.0 - p]
    }

    pub fn entropy_rate(&self) -> f64 {
        binary_entropy(self.p)
    }

    /// Upper end of the region `[0, D_c]` where the classical RDF equals `H(q) - H(D)`.
    pub fn critical_distortion(&self) -> f64 {
        let q = self.q();
        let r = q / (1.0 - q);
        0.5 * (1.0 - (1.0 - r * r).sqrt())
    }

    /// `m = 1 - p - D + 2pD`, the probability that the output repeats its previous symbol.
    pub fn repeat_probability(&self, d: f64) -> f64 {
        let p = self.p();
        1.0 - p - d + 2.0 * p * d
    }

    fn check_region(&self, d: f64) -> Result<()> {
        let dc = self.critical_distortion();
        if d > dc {
            return Err(Error::Range(format!(
                "D = {d} exceeds the critical distortion {dc}; classical R(D) is not known there"
            )));
        }
        Ok(())
    }
}

/// Nonanticipative RDF in bits: `H(m) - H(D)` for `D <= 1/2`, zero above.
pub fn nrdf(source: &BinaryMarkovSource, d: ProbValue) -> f64 {
    let d = d.get();
    if d >= 0.5 {
        return 0.0;
    }
    let m = source.repeat_probability(d).clamp(0.0, 1.0);
    let r = binary_entropy(ProbValue(m)) - binary_entropy(ProbValue(d));
    r.max(0.0)
}

/// Optimal stationary reproduction kernel `P(y_t | x_t, y_{t-1})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsmsKernel {
    pub alpha: f64,
    pub beta: f64,
    /// `table[y][2 * x + y_prev]`; each column sums to one.
    pub table: [[f64; 4]; 2],
}

impl BsmsKernel {
    pub fn from_alpha_beta(alpha: ProbValue, beta: ProbValue) -> Self {
        let (a, b) = (alpha.get(), beta.get());
        BsmsKernel {
            alpha: a,
            beta: b,
            table: [[a, b, 1.0 - b, 1.0 - a], [1.0 - a, 1.0 - b, b, a]],
        }
    }

    /// `P(y | x, y_prev)`.
    #[inline]
    pub fn prob(&self, y: usize, x: usize, y_prev: usize) -> f64 {
        self.table[y][2 * x + y_prev]
    }
}

/// Kernel attaining [`nrdf`] at distortion `D < 1/2`.
pub fn optimal_kernel(source: &BinaryMarkovSource, d: ProbValue) -> Result<BsmsKernel> {
    let d = d.get();
    if d >= 0.5 {
        return Err(Error::domain(format!(
            "kernel is defined on the positive-rate region D < 1/2, got {d}"
        )));
    }
    let p = source.p();
    let m = source.repeat_probability(d);
    let alpha = (1.0 - p) * (1.0 - d) / m;
    let beta = p * (1.0 - d) / (p + d - 2.0 * p * d);
    Ok(BsmsKernel::from_alpha_beta(
        ProbValue::new(alpha.clamp(0.0, 1.0))?,
        ProbValue::new(beta.clamp(0.0, 1.0))?,
    ))
}

/// Stationary operating point of a source/kernel pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReport {
    /// `joint[x][y]`: stationary law of `(X_t, Y_t)`.
    pub stationary_joint: [[f64; 2]; 2],
    pub achieved_distortion: f64,
    /// `H(Y_t | Y_{t-1}) - H(Y_t | X_t, Y_{t-1})` in bits.
    pub achieved_rate: f64,
    pub target_distortion: f64,
    pub target_rate: f64,
}

impl KernelReport {
    pub fn distortion_error(&self) -> f64 {
        (self.achieved_distortion - self.target_distortion).abs()
    }

    pub fn rate_error(&self) -> f64 {
        (self.achieved_rate - self.target_rate).abs()
    }
}

/// Runs the joint chain `(X_t, Y_t)` driven by `source` and `kernel` to stationarity and
/// reports the distortion and rate it achieves, next to the closed-form targets at `d`.
pub fn kernel_consistency_check(
    source: &BinaryMarkovSource,
    kernel: &BsmsKernel,
    d: ProbValue,
) -> Result<KernelReport> {
    let t = source.transition();
    // state index 2 * x + y
    let mut chain_matrix = [0.0; 16];
    for xp in 0..2 {
        for yp in 0..2 {
            for x in 0..2 {
                for y in 0..2 {
                    chain_matrix[(2 * xp + yp) * 4 + 2 * x + y] =
                        t[2 * xp + x] * kernel.prob(y, x, yp);
                }
            }
        }
    }
    let pi = chain::stationary(&chain_matrix, 4, None)?;

    // joint of (y_prev, x, y)
    let mut triple = [[[0.0; 2]; 2]; 2];
    for xp in 0..2 {
        for yp in 0..2 {
            for x in 0..2 {
                for y in 0..2 {
                    triple[yp][x][y] += pi[2 * xp + yp] * t[2 * xp + x] * kernel.prob(y, x, yp);
                }
            }
        }
    }
    let mut h_cond_full = 0.0;
    let mut h_cond_prev = 0.0;
    for yp in 0..2 {
        let pair = [
            triple[yp][0][0] + triple[yp][1][0],
            triple[yp][0][1] + triple[yp][1][1],
        ];
        h_cond_prev += entropy_nats(&pair) - entropy_nats(&[pair[0] + pair[1]]);
        for x in 0..2 {
            let row = triple[yp][x];
            h_cond_full += entropy_nats(&row) - entropy_nats(&[row[0] + row[1]]);
        }
    }

    let joint = [[pi[0], pi[1]], [pi[2], pi[3]]];
    Ok(KernelReport {
        stationary_joint: joint,
        achieved_distortion: joint[0][1] + joint[1][0],
        achieved_rate: Unit::Bits.from_nats(h_cond_prev - h_cond_full),
        target_distortion: d.get(),
        target_rate: nrdf(source, d),
    })
}

/// Classical RDF `H(q) - H(D)`, valid for `0 <= D <= D_c`.
pub fn classical_rdf_low_region(source: &BinaryMarkovSource, d: ProbValue) -> Result<f64> {
    source.check_region(d.get())?;
    Ok(binary_entropy(ProbValue(source.q())) - binary_entropy(d))
}

/// Shannon lower bound `max(0, H(p) - H(D))` on the classical RDF, for `D <= 1/2`.
pub fn shannon_lower_bound(source: &BinaryMarkovSource, d: ProbValue) -> Result<f64> {
    if d.get() > 0.5 {
        return Err(Error::domain(format!("SLB defined for D <= 1/2, got {}", d.get())));
    }
    Ok((source.entropy_rate() - binary_entropy(d)).max(0.0))
}

/// Upper bound `H(m) - H(q)` on the rate loss of causal codes, for `0 <= D <= D_c`.
pub fn causal_rate_loss_bound(source: &BinaryMarkovSource, d: ProbValue) -> Result<f64> {
    source.check_region(d.get())?;
    let m = source.repeat_probability(d.get());
    Ok(binary_entropy(ProbValue(m)) - binary_entropy(ProbValue(source.q())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn pv(x: f64) -> ProbValue {
        ProbValue::new(x).unwrap()
    }

    fn src(p: f64) -> BinaryMarkovSource {
        BinaryMarkovSource::new(p).unwrap()
    }

    #[test]
    fn rejects_degenerate_sources() {
        assert!(BinaryMarkovSource::new(0.0).is_err());
        assert!(BinaryMarkovSource::new(1.0).is_err());
        assert!(BinaryMarkovSource::new(1.2).is_err());
    }

    #[test]
    fn nrdf_examples() {
        assert!((nrdf(&src(0.5), pv(0.2)) - 0.278_071_905_112_638_3).abs() < 1e-12);
        for p in [0.1, 0.25, 0.7] {
            assert_eq!(nrdf(&src(p), pv(0.5)), 0.0);
            assert_eq!(nrdf(&src(p), pv(0.8)), 0.0);
        }
        assert!((nrdf(&src(0.25), pv(0.0)) - 0.811_278_124_459_132_8).abs() < 1e-12);
    }

    #[test]
    fn kernel_examples() {
        let k = optimal_kernel(&src(0.3), pv(0.0)).unwrap();
        assert!((k.alpha - 1.0).abs() < 1e-15 && (k.beta - 1.0).abs() < 1e-15);

        let k = optimal_kernel(&src(0.25), pv(0.1)).unwrap();
        assert!((k.alpha - 0.675 / 0.70).abs() < 1e-15);
        assert!((k.beta - 0.75).abs() < 1e-15);

        let k = optimal_kernel(&src(0.5), pv(0.25)).unwrap();
        assert!((k.alpha - 0.75).abs() < 1e-15 && (k.beta - 0.75).abs() < 1e-15);
        for col in 0..4 {
            assert!((k.table[0][col] + k.table[1][col] - 1.0).abs() < 1e-15);
        }

        assert!(matches!(optimal_kernel(&src(0.25), pv(0.5)), Err(Error::Domain(_))));
    }

    // Independent oracle: stationary law by a direct linear solve of pi (P - I) = 0, sum pi = 1.
    fn stationary_exact(s: &BinaryMarkovSource, k: &BsmsKernel) -> [f64; 4] {
        let t = s.transition();
        let mut a = DMatrix::<f64>::zeros(5, 4);
        for from in 0..4 {
            let (xp, yp) = (from / 2, from % 2);
            for to in 0..4 {
                let (x, y) = (to / 2, to % 2);
                a[(to, from)] = t[2 * xp + x] * k.prob(y, x, yp) - if to == from { 1.0 } else { 0.0 };
            }
        }
        for c in 0..4 {
            a[(4, c)] = 1.0;
        }
        let mut b = DVector::zeros(5);
        b[4] = 1.0;
        let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
        [sol[0], sol[1], sol[2], sol[3]]
    }

    #[test]
    fn consistency_examples() {
        let s = src(0.25);
        let k = optimal_kernel(&s, pv(0.1)).unwrap();
        let r = kernel_consistency_check(&s, &k, pv(0.1)).unwrap();
        assert!((r.achieved_distortion - 0.1).abs() < 1e-12);
        // H(0.70) - H(0.1)
        assert!((r.achieved_rate - 0.412_295_305_641_411_4).abs() < 1e-12);
        let exact = stationary_exact(&s, &k);
        for i in 0..4 {
            assert!((r.stationary_joint[i / 2][i % 2] - exact[i]).abs() < 1e-12);
        }

        let s = src(0.5);
        let k = optimal_kernel(&s, pv(0.25)).unwrap();
        let r = kernel_consistency_check(&s, &k, pv(0.25)).unwrap();
        assert!((r.achieved_distortion - 0.25).abs() < 1e-12);
        assert!((r.achieved_rate - 0.188_721_875_540_867_1).abs() < 1e-12);

        for p in [0.1, 0.4, 0.8] {
            let s = src(p);
            let k = optimal_kernel(&s, pv(0.0)).unwrap();
            let r = kernel_consistency_check(&s, &k, pv(0.0)).unwrap();
            assert!(r.achieved_distortion.abs() < 1e-12);
            assert!((r.achieved_rate - s.entropy_rate()).abs() < 1e-12);
        }
    }

    #[test]
    fn classical_region_examples() {
        let s = src(0.25);
        assert!((s.critical_distortion() - 0.028_595_479_208_968_4).abs() < 1e-13);
        let r = classical_rdf_low_region(&s, pv(0.02)).unwrap();
        assert!((r - 0.669_837_581_917_312_2).abs() < 1e-12);
        let dc = s.critical_distortion();
        let at_dc = classical_rdf_low_region(&s, pv(dc)).unwrap();
        assert!((at_dc - (h2f(0.25) - h2f(dc))).abs() < 1e-15);
        assert!(matches!(classical_rdf_low_region(&s, pv(0.05)), Err(Error::Range(_))));

        let iid = src(0.5);
        assert!((classical_rdf_low_region(&iid, pv(0.2)).unwrap() - 0.278_071_905_112_638_3).abs() < 1e-12);
    }

    fn h2f(x: f64) -> f64 {
        binary_entropy(pv(x))
    }

    #[test]
    fn slb_examples() {
        let s = src(0.25);
        assert!((shannon_lower_bound(&s, pv(0.02)).unwrap() - 0.669_837_581_917_312_2).abs() < 1e-12);
        assert_eq!(shannon_lower_bound(&src(0.1), pv(0.3)).unwrap(), 0.0);
        assert!((shannon_lower_bound(&src(0.5), pv(0.1)).unwrap() - 0.531_004_406_410_718_5).abs() < 1e-12);
        assert!(shannon_lower_bound(&s, pv(0.6)).is_err());
    }

    #[test]
    fn rate_loss_examples() {
        let s = src(0.25);
        // H(0.74) - H(0.25)
        let rl = causal_rate_loss_bound(&s, pv(0.02)).unwrap();
        assert!((rl - 0.015_468_248_033_485_03).abs() < 1e-12, "{rl}");
        assert!(causal_rate_loss_bound(&s, pv(0.0)).unwrap().abs() < 1e-15);
        let iid = src(0.5);
        assert_eq!(iid.critical_distortion(), 0.5);
        for d in [0.01, 0.2, 0.45] {
            assert!(causal_rate_loss_bound(&iid, pv(d)).unwrap().abs() < 1e-15);
        }
        assert!(matches!(causal_rate_loss_bound(&s, pv(0.1)), Err(Error::Range(_))));
    }

    #[test]
    fn relabeling_symmetry() {
        for p in [0.05, 0.25, 0.4] {
            for k in 0..=50 {
                let d = k as f64 * 0.01;
                let m = src(p).repeat_probability(d);
                assert_eq!(h2f(m), h2f(1.0 - m));
                assert!((nrdf(&src(p), pv(d)) - nrdf(&src(1.0 - p), pv(d))).abs() < 1e-12);
            }
        }
    }
}
