use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("oracle invariant violated: {0}")]
    Invariant(String),
    #[error("instance too large for exhaustive search: {combinations} admissible sets (limit {limit})")]
    TooLarge { combinations: f64, limit: f64 },
    #[error("protocol fault: {0}")]
    Protocol(String),
    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
