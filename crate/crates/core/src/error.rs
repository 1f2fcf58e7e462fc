use thiserror::Error;

/// Errors raised by the protocol library and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("estimator used before initialization")]
    Uninitialized,

    #[error("degenerate Kalman gain: innovation variance is zero")]
    DegenerateGain,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed event log: {0}")]
    Log(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("log serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
