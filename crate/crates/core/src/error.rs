use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required columns: {}", .0.join(", "))]
    Schema(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("record integrity error: {0}")]
    Integrity(String),

    #[error("duplicate response for examiner {examiner:?} on item {item:?}")]
    DuplicatePair { examiner: String, item: String },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("sampler initialization failed after {attempts} attempts: {reason}")]
    Initialization { attempts: usize, reason: String },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        best: Vec<f64>,
    },

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
