use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("dual solver failed: {reason} (eta range [{lo:e}, {hi:e}], {iterations} iterations)")]
    Solver {
        reason: String,
        lo: f64,
        hi: f64,
        iterations: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
