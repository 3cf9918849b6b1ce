use thiserror::Error;

/// Errors produced anywhere in the simulation engine or the verification harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("Cholesky factorization failed after jitter retries; positions {positions:?}")]
    Numerical { positions: Vec<f64> },

    #[error("unknown atom id {0}")]
    UnknownAtom(u64),

    #[error("Picard iteration did not converge after {} passes; distances {distances:?}", distances.len())]
    PicardDiverged { distances: Vec<f64> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }
}
