use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate tail: (1 - beta) * T = {0} is below 1")]
    DegenerateTail(f64),

    #[error("variance convention {convention} cannot be combined with budget normalization {normalization}")]
    ConventionMismatch {
        convention: &'static str,
        normalization: &'static str,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("saddle point diverged at tau = {tau}: {reason}")]
    Diverged { tau: f64, reason: String },

    #[error("unbounded representative-weight potential")]
    UnboundedPotential,

    #[error("fraction of unbounded samples never crosses 1/2 on the grid")]
    NoCrossing,

    #[error("deviation {value:.4e} exceeds tolerance {tolerance:.4e}")]
    ToleranceExceeded { value: f64, tolerance: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Errors caused by malformed user input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::DegenerateTail(_)
                | Error::ConventionMismatch { .. }
                | Error::Parse { .. }
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
