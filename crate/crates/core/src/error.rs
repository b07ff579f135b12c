use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("value {value} out of range for variable of size {size}")]
    OutOfRange { value: usize, size: usize },
    #[error("unknown identifier: {0}")]
    Unknown(String),
    #[error("scope mismatch: {0}")]
    ScopeMismatch(String),
    #[error("no feasible joint distribution: {0}")]
    Infeasible(String),
    #[error("objective is unbounded below: {0}")]
    Unbounded(String),
    #[error("non-convex weighting (beta < gamma * alpha) on arc {arc}: beta={beta}, gamma*alpha={ga}")]
    NonConvex { arc: String, beta: f64, ga: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
