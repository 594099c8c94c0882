//! Finite-horizon dual certificates.
//!
//! For a horizon of `n + 1` stages, a certificate is a tilt `s <= 0` together with nonnegative
//! weights `λ_i(x^i, y^{i-1})`, one table per stage. Writing `P` for the joint law of
//! source and reproduction induced by a reference kernel, the certificate is feasible when
//!
//! ```text
//! Σ_{x^i} exp(s ρ(x_i, y_i)) λ_i(x^i, y^{i-1}) P(x^i | y^{i-1}) <= 1
//! ```
//!
//! for every stage `i` and every `(y_i, y^{i-1})`, and its value is
//! `s D (n + 1) + Σ_i E log λ_i(X^i, Y^{i-1})`.
//!
//! The horizon starts in the stationary regime: the `memory` reproduction symbols preceding
//! stage 0 are drawn together with the previous source symbol from the reference stationary
//! joint, and belong to every output history.
//!
//! Table layout for stage `i`: entry `hy * K^(i+1) + hx`, where `hx` encodes `x_0 .. x_i` in
//! base `K` (source alphabet size) with `x_i` in the lowest digit, and `hy` encodes the
//! starting context followed by `y_0 .. y_{i-1}` in base `L` with `y_{i-1}` in the lowest digit.

use serde::Serialize;

use super::{DistortionMatrix, FiniteMarkovSource, RateSolution};
use crate::error::{Error, Result};
use crate::info::Unit;

/// Feasibility slack on the constraint sums.
pub const FEASIBILITY_TOL: f64 = 1e-12;
/// Largest per-stage table the enumeration will build.
pub const MAX_STAGE_ENTRIES: usize = 1 << 24;

/// Problem a certificate or primal value refers to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonInstance {
    pub source: FiniteMarkovSource,
    pub distortion: DistortionMatrix,
    pub target: f64,
    /// Index of the last stage; the horizon has `horizon + 1` stages.
    pub horizon: usize,
}

impl HorizonInstance {
    pub fn new(
        source: FiniteMarkovSource,
        distortion: DistortionMatrix,
        target: f64,
        horizon: usize,
    ) -> Result<Self> {
        if distortion.source_size() != source.alphabet_size() {
            return Err(Error::domain("distortion matrix does not match the source alphabet"));
        }
        if !(target >= 0.0) {
            return Err(Error::domain(format!("target distortion {target} must be nonnegative")));
        }
        Ok(HorizonInstance {
            source,
            distortion,
            target,
            horizon,
        })
    }

    pub fn stages(&self) -> usize {
        self.horizon + 1
    }
}

struct Stage {
    hx_count: usize,
    /// `P(x^i, y^{i-1})`, laid out as the certificate tables.
    law: Vec<f64>,
    /// Kernel context at the end of each output history.
    context: Vec<usize>,
}

impl Stage {
    fn hy_count(&self) -> usize {
        self.context.len()
    }
}

/// Laws of `(X^i, Y^{i-1})` for every stage under the reference kernel.
fn forward_laws(instance: &HorizonInstance, reference: &RateSolution) -> Result<Vec<Stage>> {
    let kernel = &reference.kernel;
    let src = &instance.source;
    if kernel.distortion_matrix != instance.distortion {
        return Err(Error::Mismatch(
            "reference kernel was computed for a different distortion matrix".into(),
        ));
    }
    if kernel.source_size != src.alphabet_size() {
        return Err(Error::Mismatch("reference kernel source alphabet differs".into()));
    }
    let (k, l, nc) = (kernel.source_size, kernel.output_size, kernel.contexts);

    let mut hx_count = k;
    let mut hy_count = nc;
    for _ in 0..instance.horizon {
        hx_count = hx_count.saturating_mul(k);
        hy_count = hy_count.saturating_mul(l);
    }
    if hx_count.saturating_mul(hy_count) > MAX_STAGE_ENTRIES {
        return Err(Error::domain(format!(
            "horizon {} needs {hx_count} x {hy_count} history tables, above the enumeration limit",
            instance.horizon
        )));
    }

    let mut first = vec![0.0; nc * k];
    for xp in 0..k {
        for c in 0..nc {
            let mass = reference.joint[xp * nc + c];
            for x in 0..k {
                first[c * k + x] += mass * src.transition(xp, x);
            }
        }
    }
    let mut stages = vec![Stage {
        hx_count: k,
        law: first,
        context: (0..nc).collect(),
    }];

    for _ in 0..instance.horizon {
        let prev = stages.last().unwrap();
        let hx_next = prev.hx_count * k;
        let hy_next = prev.hy_count() * l;
        let mut law = vec![0.0; hy_next * hx_next];
        let mut context = vec![0; hy_next];
        for hy in 0..prev.hy_count() {
            let c = prev.context[hy];
            for y in 0..l {
                context[hy * l + y] = kernel.push(c, y);
            }
            for hx in 0..prev.hx_count {
                let f = prev.law[hy * prev.hx_count + hx];
                if f == 0.0 {
                    continue;
                }
                let xi = hx % k;
                for y in 0..l {
                    let fq = f * kernel.q(c, xi, y);
                    let base = (hy * l + y) * hx_next + hx * k;
                    for x in 0..k {
                        law[base + x] += fq * src.transition(xi, x);
                    }
                }
            }
        }
        stages.push(Stage {
            hx_count: hx_next,
            law,
            context,
        });
    }
    Ok(stages)
}

fn decode_history(hy: usize, contexts: usize, memory: usize, l: usize, stage: usize) -> Vec<usize> {
    let mut ys = Vec::with_capacity(memory + stage);
    let mut rest = hy;
    for _ in 0..stage {
        ys.push(rest % l);
        rest /= l;
    }
    debug_assert!(rest < contexts);
    for _ in 0..memory {
        ys.push(rest % l);
        rest /= l;
    }
    ys.reverse();
    ys
}

/// Expected `log λ` terms plus `s D (n + 1)`, in nats, after checking feasibility.
fn evaluate(
    instance: &HorizonInstance,
    reference: &RateSolution,
    stages: &[Stage],
    s: f64,
    lambda: &[Vec<f64>],
) -> Result<f64> {
    let kernel = &reference.kernel;
    let (k, l) = (kernel.source_size, kernel.output_size);
    let rho = &instance.distortion;
    if !(s <= 0.0) {
        return Err(Error::domain(format!("tilt s = {s} must be nonpositive")));
    }
    if lambda.len() != stages.len() {
        return Err(Error::domain(format!(
            "certificate has {} stages, horizon needs {}",
            lambda.len(),
            stages.len()
        )));
    }
    let tilt: Vec<f64> = (0..k * l).map(|i| (s * rho.get(i / l, i % l)).exp()).collect();

    let mut value = s * instance.target * stages.len() as f64;
    for (i, (stage, lam)) in stages.iter().zip(lambda).enumerate() {
        if lam.len() != stage.law.len() {
            return Err(Error::domain(format!(
                "stage {i} table has {} entries, expected {}",
                lam.len(),
                stage.law.len()
            )));
        }
        if let Some(bad) = lam.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::domain(format!("stage {i} has negative weight {bad}")));
        }
        let hxc = stage.hx_count;
        let mut sums = vec![0.0; l];
        for hy in 0..stage.hy_count() {
            let row = &stage.law[hy * hxc..(hy + 1) * hxc];
            let lrow = &lam[hy * hxc..(hy + 1) * hxc];
            let mass: f64 = row.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            sums.iter_mut().for_each(|v| *v = 0.0);
            for (hx, (&f, &w)) in row.iter().zip(lrow).enumerate() {
                if f == 0.0 {
                    continue;
                }
                let xi = hx % k;
                for (y, sum) in sums.iter_mut().enumerate() {
                    *sum += tilt[xi * l + y] * w * f;
                }
                value += if w > 0.0 { f * w.ln() } else { f64::NEG_INFINITY };
            }
            for (y, &sum) in sums.iter().enumerate() {
                let c = sum / mass;
                if c > 1.0 + FEASIBILITY_TOL {
                    let mut history = decode_history(hy, kernel.contexts, kernel.memory, l, i);
                    history.push(y);
                    return Err(Error::Infeasible {
                        stage: i,
                        history,
                        value: c,
                    });
                }
            }
        }
    }
    Ok(value)
}

/// Value in bits of the certificate `(s, lambda)` for `instance`, with conditionals taken from
/// the joint law that `reference` induces. Rejects infeasible certificates.
pub fn dual_certificate_value(
    instance: &HorizonInstance,
    reference: &RateSolution,
    s: f64,
    lambda: &[Vec<f64>],
) -> Result<f64> {
    let stages = forward_laws(instance, reference)?;
    evaluate(instance, reference, &stages, s, lambda).map(|v| Unit::Bits.from_nats(v))
}

/// A feasible certificate together with its value in bits.
#[derive(Debug, Clone, Serialize)]
pub struct DualCertificate {
    pub instance: HorizonInstance,
    pub s: f64,
    pub lambda: Vec<Vec<f64>>,
    pub value: f64,
}

impl DualCertificate {
    pub fn new(
        instance: HorizonInstance,
        reference: &RateSolution,
        s: f64,
        lambda: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let value = dual_certificate_value(&instance, reference, s, &lambda)?;
        Ok(DualCertificate {
            instance,
            s,
            lambda,
            value,
        })
    }

    /// `s = 0`, `λ = 1`: always feasible, value zero.
    pub fn trivial(instance: HorizonInstance, reference: &RateSolution) -> Result<Self> {
        let stages = forward_laws(&instance, reference)?;
        let lambda = stages.iter().map(|st| vec![1.0; st.law.len()]).collect();
        Self::new(instance, reference, 0.0, lambda)
    }

    /// Certificate read off a converged primal solution: `λ_i = c(y^{i-1}) / Z(c_{i-1}, x_i)`,
    /// with `Z` the tilt normalizer and `c` the largest scale keeping every constraint at most 1.
    pub fn from_primal(instance: HorizonInstance, reference: &RateSolution) -> Result<Self> {
        let stages = forward_laws(&instance, reference)?;
        let kernel = &reference.kernel;
        let (k, l) = (kernel.source_size, kernel.output_size);
        let s = kernel.s;
        let tilt: Vec<f64> = (0..k * l)
            .map(|i| (s * instance.distortion.get(i / l, i % l)).exp())
            .collect();

        let mut lambda = Vec::with_capacity(stages.len());
        for stage in &stages {
            let hxc = stage.hx_count;
            let mut lam = vec![0.0; stage.law.len()];
            for hy in 0..stage.hy_count() {
                let c = stage.context[hy];
                let row = &stage.law[hy * hxc..(hy + 1) * hxc];
                let mass: f64 = row.iter().sum();
                let mut worst = 0.0_f64;
                if mass > 0.0 {
                    for y in 0..l {
                        let sum: f64 = row
                            .iter()
                            .enumerate()
                            .map(|(hx, &f)| tilt[(hx % k) * l + y] * f / kernel.z(c, hx % k))
                            .sum();
                        worst = worst.max(sum / mass);
                    }
                }
                let scale = if worst > 0.0 { 1.0 / worst } else { 1.0 };
                for hx in 0..hxc {
                    lam[hy * hxc + hx] = scale / kernel.z(c, hx % k);
                }
            }
            lambda.push(lam);
        }
        let value = Unit::Bits.from_nats(evaluate(&instance, reference, &stages, s, &lambda)?);
        Ok(DualCertificate {
            instance,
            s,
            lambda,
            value,
        })
    }

    /// Multiplies every weight by `c`; feasibility is kept for `c` in `(0, 1]`.
    pub fn scaled(&self, reference: &RateSolution, c: f64) -> Result<Self> {
        let lambda = self
            .lambda
            .iter()
            .map(|t| t.iter().map(|v| v * c).collect())
            .collect();
        Self::new(self.instance.clone(), reference, self.s, lambda)
    }
}

/// Directed information and distortion of a reference kernel over the horizon.
#[derive(Debug, Clone, Serialize)]
pub struct HorizonPrimal {
    pub instance: HorizonInstance,
    /// `Σ_i I(X_i; Y_i | Y^{i-1})` for this kernel, in bits.
    pub value: f64,
    /// Distortion per stage.
    pub distortion: f64,
}

pub fn primal_horizon_value(instance: &HorizonInstance, reference: &RateSolution) -> Result<HorizonPrimal> {
    let stages = forward_laws(instance, reference)?;
    let kernel = &reference.kernel;
    let (k, l) = (kernel.source_size, kernel.output_size);
    let mut info = 0.0;
    let mut dist = 0.0;
    let mut out = vec![0.0; l];
    for stage in &stages {
        let hxc = stage.hx_count;
        for hy in 0..stage.hy_count() {
            let c = stage.context[hy];
            let row = &stage.law[hy * hxc..(hy + 1) * hxc];
            let mass: f64 = row.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            out.iter_mut().for_each(|v| *v = 0.0);
            for (hx, &f) in row.iter().enumerate() {
                for (y, o) in out.iter_mut().enumerate() {
                    *o += f * kernel.q(c, hx % k, y);
                }
            }
            for (hx, &f) in row.iter().enumerate() {
                if f == 0.0 {
                    continue;
                }
                let xi = hx % k;
                for y in 0..l {
                    let q = kernel.q(c, xi, y);
                    if q > 0.0 {
                        info += f * q * (q * mass / out[y]).ln();
                        dist += f * q * instance.distortion.get(xi, y);
                    }
                }
            }
        }
    }
    Ok(HorizonPrimal {
        instance: instance.clone(),
        value: Unit::Bits.from_nats(info),
        distortion: dist / stages.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub primal: f64,
    pub dual: f64,
    /// `primal - dual`, bits.
    pub gap: f64,
    /// `gap >= -1e-9`.
    pub weak_duality: bool,
    /// Weak duality holds and `gap <= tol`.
    pub optimal: bool,
}

/// Compares a primal value with a certificate for the same instance.
pub fn certify(primal: &HorizonPrimal, dual: &DualCertificate, tol: f64) -> Result<GapReport> {
    if primal.instance != dual.instance {
        return Err(Error::Mismatch(
            "primal value and certificate refer to different problem instances".into(),
        ));
    }
    let gap = primal.value - dual.value;
    let weak_duality = gap >= -1e-9;
    Ok(GapReport {
        primal: primal.value,
        dual: dual.value,
        gap,
        weak_duality,
        optimal: weak_duality && gap <= tol,
    })
}
