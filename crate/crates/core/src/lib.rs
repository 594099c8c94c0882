//! Nonanticipative rate distortion functions for sources with memory.
//!
//! - [`info`]: entropies and reverse waterfilling.
//! - [`bsms`]: closed forms for the binary symmetric Markov source.
//! - [`finite`]: fixed-point solver and dual certificates for finite-alphabet Markov sources.
//! - [`gauss`]: partially observed Gauss-Markov sources.
//! - [`realization`]: Monte Carlo encoder, parallel Gaussian channel and decoder.
//! - [`spectral`]: classical RDF of stationary Gaussian sources and the zero-delay rate loss.

mod chain;
pub mod bsms;
pub mod error;
pub mod finite;
pub mod gauss;
pub mod info;
pub mod realization;
pub mod spectral;

pub use error::{Error, Result};
