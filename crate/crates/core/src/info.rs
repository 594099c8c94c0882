//! Entropy primitives and reverse waterfilling.
//!
//! Rates are reported in bits unless a [`Unit`] is passed explicitly.

use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute tolerance on `sum(allocations) - D` for the water-level search.
pub const WATERFILL_TOL: f64 = 1e-12;

/// Logarithm base for reported rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Unit {
    #[default]
    Bits,
    Nats,
}

impl Unit {
    /// Converts a value in nats into this unit.
    pub fn from_nats(self, nats: f64) -> f64 {
        match self {
            Unit::Bits => nats / std::f64::consts::LN_2,
            Unit::Nats => nats,
        }
    }

    pub fn log(self, x: f64) -> f64 {
        match self {
            Unit::Bits => x.log2(),
            Unit::Nats => x.ln(),
        }
    }
}

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct ProbValue(pub(crate) f64);

impl ProbValue {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(ProbValue(value))
        } else {
            Err(Error::domain(format!("probability {value} outside [0, 1]")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    /// `1 - p`.
    pub fn complement(self) -> Self {
        ProbValue(1.0 - self.0)
    }
}

impl TryFrom<f64> for ProbValue {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        ProbValue::new(value)
    }
}

/// `-x log x` in nats, with `0 log 0 = 0`.
#[inline]
pub(crate) fn xlogx_neg(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -x * x.ln()
    }
}

/// Binary entropy in bits.
pub fn binary_entropy(p: ProbValue) -> f64 {
    binary_entropy_in(p, Unit::Bits)
}

pub fn binary_entropy_in(p: ProbValue, unit: Unit) -> f64 {
    let p = p.get();
    let nats = xlogx_neg(p) + xlogx_neg(1.0 - p);
    // Clamp rounding overshoot at p = 1/2.
    unit.from_nats(nats).min(match unit {
        Unit::Bits => 1.0,
        Unit::Nats => std::f64::consts::LN_2,
    })
}

/// Binary entropy of a raw `f64`, checked.
pub fn h2(p: f64) -> Result<f64> {
    Ok(binary_entropy(ProbValue::new(p)?))
}

/// Shannon entropy of a probability vector, in nats. Entries are assumed nonnegative.
pub fn entropy_nats(probs: &[f64]) -> f64 {
    probs.iter().copied().map(xlogx_neg).sum()
}

/// Result of reverse waterfilling a target distortion over independent components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaterfillAllocation {
    /// Component variances, in the order given.
    pub eigenvalues: Vec<f64>,
    /// Per-component distortion `min(water_level, eigenvalue)`.
    pub allocations: Vec<f64>,
    pub water_level: f64,
    pub target_distortion: f64,
}

impl WaterfillAllocation {
    /// Total power, i.e. the distortion at which the rate drops to zero.
    pub fn total_power(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `1 - delta_i / lambda_i`, zero for degenerate components.
    pub fn gains(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .zip(&self.allocations)
            .map(|(&l, &d)| if l > 0.0 { (1.0 - d / l).max(0.0) } else { 0.0 })
            .collect()
    }

    pub fn is_saturated(&self) -> bool {
        self.target_distortion >= self.total_power()
    }
}

fn filled(eigenvalues: &[f64], level: f64) -> f64 {
    eigenvalues.iter().map(|&l| l.min(level)).sum()
}

/// Splits `d` over the components so that each gets `min(xi, lambda_i)` and the total is `d`.
///
/// The water level is located by bisection on `xi` over `[0, max lambda]`. Once the set of
/// components below the water is known, `xi` is recomputed from that set so the allocations sum
/// to `d` up to rounding.
pub fn reverse_waterfill(eigenvalues: &[f64], d: f64) -> Result<WaterfillAllocation> {
    if eigenvalues.is_empty() {
        return Err(Error::domain("no eigenvalues to waterfill"));
    }
    if let Some(bad) = eigenvalues.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::domain(format!("eigenvalue {bad} is not a nonnegative number")));
    }
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::domain(format!("distortion {d} is not a nonnegative number")));
    }

    let max = eigenvalues.iter().copied().fold(0.0, f64::max);
    let total: f64 = eigenvalues.iter().sum();
    if d >= total {
        return Ok(WaterfillAllocation {
            eigenvalues: eigenvalues.to_vec(),
            allocations: eigenvalues.to_vec(),
            water_level: max,
            target_distortion: d,
        });
    }

    let (mut lo, mut hi) = (0.0_f64, max);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let err = filled(eigenvalues, mid) - d;
        if err.abs() <= WATERFILL_TOL {
            lo = mid;
            hi = mid;
            break;
        }
        if err > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut level = 0.5 * (lo + hi);

    // Exact level on the active set found by the search.
    let (mut below, mut active) = (0.0, 0usize);
    for &l in eigenvalues {
        if l <= level {
            below += l;
        } else {
            active += 1;
        }
    }
    if active > 0 {
        let exact = (d - below) / active as f64;
        if eigenvalues
            .iter()
            .all(|&l| (l <= level) == (l <= exact) || (l - exact).abs() <= WATERFILL_TOL)
        {
            level = exact;
        }
    }

    let allocations = eigenvalues.iter().map(|&l| l.min(level)).collect();
    Ok(WaterfillAllocation {
        eigenvalues: eigenvalues.to_vec(),
        allocations,
        water_level: level,
        target_distortion: d,
    })
}

/// `1/2 sum log2(lambda_i / delta_i)` in bits; zero-variance components contribute nothing.
pub fn waterfill_rate(alloc: &WaterfillAllocation) -> Result<f64> {
    waterfill_rate_in(alloc, Unit::Bits)
}

pub fn waterfill_rate_in(alloc: &WaterfillAllocation, unit: Unit) -> Result<f64> {
    if alloc.eigenvalues.len() != alloc.allocations.len() {
        return Err(Error::domain("eigenvalue and allocation lengths differ"));
    }
    let mut rate = 0.0;
    for (i, (&l, &d)) in alloc.eigenvalues.iter().zip(&alloc.allocations).enumerate() {
        if l <= 0.0 {
            continue;
        }
        if d <= 0.0 {
            return Err(Error::InfiniteRate {
                component: i,
                variance: l,
            });
        }
        if d < l {
            rate += 0.5 * unit.log(l / d);
        }
    }
    Ok(rate)
}
