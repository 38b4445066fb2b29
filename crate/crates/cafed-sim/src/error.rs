use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate chain: {0}")]
    DegenerateChain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("solver did not converge: {0}")]
    Convergence(String),

    #[error("degenerate aggregation weights: {0}")]
    DegenerateWeights(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
