//! Nonanticipative RDF of partially observed Gauss-Markov sources.
//!
//! The source is `Z_{t+1} = A Z_t + B W_t`, `X_t = C Z_t + N V_t` and distortion is squared
//! error on `X`. At the stationary optimum the prediction error `X_t - E[X_t | Y^{t-1}]` has
//! covariance `Λ = C Σ C' + N N'`, its eigenvalues are reverse waterfilled against `D`, and `Σ`
//! solves a Riccati equation whose gain depends on the resulting allocation. [`solve`] iterates
//! this map to its fixed point.

pub(crate) mod linalg;
mod model;
mod solve;

pub use model::{GaussMarkovModel, ModelDims};
pub use solve::{
    kalman_gain_and_filter, rd_curve, solve, ChannelNoise, GaussNrdfSolution, GaussOptions, PredictorFilter,
    RdPoint, SolveDiagnostics,
};

/// Stationary state covariance of a stable model, `Σ = A Σ A' + B B'`.
pub fn stationary_covariance(model: &GaussMarkovModel) -> crate::Result<nalgebra::DMatrix<f64>> {
    if !model.is_stable() {
        return Err(crate::Error::InvalidModel(format!(
            "A has spectral radius {} >= 1, no stationary law",
            model.spectral_radius()
        )));
    }
    linalg::lyapunov(model.a(), &model.process_noise())
}
