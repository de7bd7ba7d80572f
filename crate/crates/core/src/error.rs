use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Fock expansion of a state does not fit into the truncated space.
    #[error("truncation leaks {leaked:.3e} of the probability mass (limit {limit:.1e})")]
    Truncation { leaked: f64, limit: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("mean-field trajectory diverged at t = {time} (|alpha| = {magnitude:.3e})")]
    Instability { time: f64, magnitude: f64 },

    #[error("fit failed: {reason}")]
    FitFailure { reason: String, best: Vec<f64> },

    #[error("series not converged: relative variation {variation:.3e} exceeds {tol:.3e}")]
    NotConverged { variation: f64, tol: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
