use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The argument is valid but the requested quantity is not known in closed form there.
    #[error("range error: {0}")]
    Range(String),

    /// Zero distortion on a component with positive variance.
    #[error("infinite rate: component {component} has variance {variance} but zero allocated distortion")]
    InfiniteRate { component: usize, variance: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// The induced joint chain has no unique stationary distribution.
    #[error("degenerate chain: {0}")]
    Degenerate(String),

    #[error("root bracket failure: {0}")]
    Bracket(String),

    /// A dual certificate violates the constraint set at the given stage and output history.
    #[error("infeasible dual certificate at stage {stage}, output history {history:?} (constraint value {value})")]
    Infeasible {
        stage: usize,
        history: Vec<usize>,
        value: f64,
    },

    #[error("mismatched problem instances: {0}")]
    Mismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    /// Simulated state left any reasonable range.
    #[error("filter divergence at step {step}")]
    Divergence { step: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures of an iterative numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Degenerate(_)
                | Error::Bracket(_)
                | Error::Singular(_)
                | Error::Divergence { .. }
        )
    }
}
