//! Nonanticipative RDF of stationary finite-alphabet Markov sources.
//!
//! [`solve_stationary`] iterates the exponential-tilt form of the optimal reproduction kernel,
//! `q(y | c, x) ∝ exp(s ρ(x, y)) ν(y | c)`, where `c` is the context formed by the last
//! `memory` reproduction symbols, until the output kernel `ν` reproduces itself under the
//! stationary joint law. [`solve_for_distortion`] searches the tilt `s` for a target
//! distortion. The [`dual`] module evaluates lower-bound certificates on finite horizons.
//!
//! Internally everything is in nats with `exp(s ρ)`; rates are reported in bits.

pub mod dual;
mod solver;

use serde::Serialize;

use crate::bsms::BinaryMarkovSource;
use crate::chain;
use crate::error::{Error, Result};

pub use solver::{solve_for_distortion, solve_stationary, RateSolution};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Stationary first-order Markov source on `{0, .., size - 1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteMarkovSource {
    size: usize,
    /// Row-major `P(x_t | x_{t-1})`.
    transition: Vec<f64>,
    /// Stationary law, a left fixed point of `transition`.
    initial: Vec<f64>,
}

impl FiniteMarkovSource {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return Err(Error::domain("empty alphabet"));
        }
        let mut transition = Vec::with_capacity(size * size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::domain(format!(
                    "transition row {i} has {} entries, expected {size}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::domain(format!("transition row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::domain(format!("transition row {i} sums to {sum}")));
            }
            transition.extend_from_slice(row);
        }
        let initial = chain::stationary(&transition, size, None)?;
        Ok(FiniteMarkovSource {
            size,
            transition,
            initial,
        })
    }

    /// Memoryless source with the given marginal.
    pub fn iid(probs: &[f64]) -> Result<Self> {
        let rows = vec![probs.to_vec(); probs.len()];
        Self::new(&rows)
    }

    pub fn alphabet_size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.size + to]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
}

impl From<&BinaryMarkovSource> for FiniteMarkovSource {
    fn from(s: &BinaryMarkovSource) -> Self {
        FiniteMarkovSource {
            size: 2,
            transition: s.transition().to_vec(),
            initial: vec![0.5, 0.5],
        }
    }
}

/// Single-letter distortion `ρ(x, y)` with `x` in the source alphabet and `y` in the
/// reproduction alphabet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionMatrix {
    source_size: usize,
    output_size: usize,
    values: Vec<f64>,
}

impl DistortionMatrix {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let source_size = rows.len();
        let output_size = rows.first().map_or(0, Vec::len);
        if source_size == 0 || output_size == 0 {
            return Err(Error::domain("empty distortion matrix"));
        }
        if rows.iter().any(|r| r.len() != output_size) {
            return Err(Error::domain("ragged distortion matrix"));
        }
        if rows.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain("distortion entries must be finite and nonnegative"));
        }
        Ok(DistortionMatrix {
            source_size,
            output_size,
            values: rows.concat(),
        })
    }

    pub fn hamming(size: usize) -> Self {
        let values = (0..size * size)
            .map(|i| if i / size == i % size { 0.0 } else { 1.0 })
            .collect();
        DistortionMatrix {
            source_size: size,
            output_size: size,
            values,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.output_size + y]
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }
}

/// Knobs for the alternating fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Stop when the sup-norm change of `ν` drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new `ν` in each update; 1 is undamped.
    pub damping: f64,
    /// Number of past reproduction symbols `ν` conditions on.
    pub memory: usize,
    /// Absolute tolerance on `D(s) - D_target` for the search over `s`.
    pub distortion_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 100_000,
            damping: 1.0,
            memory: 1,
            distortion_tol: 1e-9,
        }
    }
}

impl SolverOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::domain("tolerance must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::domain(format!("damping {} outside (0, 1]", self.damping)));
        }
        if self.memory == 0 {
            return Err(Error::domain("output memory must be at least one symbol"));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter must be positive"));
        }
        Ok(())
    }
}

/// Reproduction kernel `q(y | c, x)` and output kernel `ν(y | c)` over contexts `c` made of
/// the last `memory` outputs.
///
/// A context is encoded base `output_size` with the most recent symbol in the lowest digit, so
/// appending `y` to context `c` gives `(c * output_size + y) % contexts`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteKernelPair {
    pub source_size: usize,
    pub output_size: usize,
    pub memory: usize,
    pub contexts: usize,
    /// `q_kernel[(c * source_size + x) * output_size + y]`.
    pub q_kernel: Vec<f64>,
    /// `nu_kernel[c * output_size + y]`.
    pub nu_kernel: Vec<f64>,
    /// Normalizer of the tilt, `Σ_y exp(s ρ(x, y)) ν(y | c)`, indexed `c * source_size + x`.
    pub normalizer: Vec<f64>,
    pub s: f64,
    pub distortion_matrix: DistortionMatrix,
}

impl FiniteKernelPair {
    /// Builds the tilted kernel from an output kernel.
    pub fn tilt(distortion: &DistortionMatrix, nu: Vec<f64>, memory: usize, s: f64) -> Self {
        let (k, l) = (distortion.source_size(), distortion.output_size());
        let contexts = l.pow(memory as u32);
        debug_assert_eq!(nu.len(), contexts * l);
        let mut q = vec![0.0; contexts * k * l];
        let mut normalizer = vec![0.0; contexts * k];
        for c in 0..contexts {
            let nu_c = &nu[c * l..(c + 1) * l];
            for x in 0..k {
                let row = &mut q[(c * k + x) * l..(c * k + x + 1) * l];
                let mut z = 0.0;
                for (y, (r, &n)) in row.iter_mut().zip(nu_c).enumerate() {
                    *r = (s * distortion.get(x, y)).exp() * n;
                    z += *r;
                }
                row.iter_mut().for_each(|r| *r /= z);
                normalizer[c * k + x] = z;
            }
        }
        FiniteKernelPair {
            source_size: k,
            output_size: l,
            memory,
            contexts,
            q_kernel: q,
            nu_kernel: nu,
            normalizer,
            s,
            distortion_matrix: distortion.clone(),
        }
    }

    #[inline]
    pub fn q(&self, c: usize, x: usize, y: usize) -> f64 {
        self.q_kernel[(c * self.source_size + x) * self.output_size + y]
    }

    #[inline]
    pub fn nu(&self, c: usize, y: usize) -> f64 {
        self.nu_kernel[c * self.output_size + y]
    }

    #[inline]
    pub fn z(&self, c: usize, x: usize) -> f64 {
        self.normalizer[c * self.source_size + x]
    }

    #[inline]
    pub fn push(&self, c: usize, y: usize) -> usize {
        (c * self.output_size + y) % self.contexts
    }
}
