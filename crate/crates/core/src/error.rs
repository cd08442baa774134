use thiserror::Error;

/// Errors raised by the reduction engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("truncation mismatch: {0}")]
    Truncation(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("frequency vector not admissible: {0}")]
    NonAdmissible(String),
    #[error("generator too large for the exponential (norm {0:.3e}); reduce eps")]
    StepSize(f64),
    #[error("operator-matrix structure violated (defect {0:.3e})")]
    Structure(f64),
    #[error("model error: {0}")]
    Model(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
