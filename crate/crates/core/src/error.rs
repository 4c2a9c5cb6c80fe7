use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("node {0} is not honest")]
    NotHonest(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("delta {delta} is not below the {rule} tolerance delta_max = {delta_max}")]
    DeltaOutOfRange {
        rule: &'static str,
        delta: f64,
        delta_max: f64,
    },

    #[error("schedule overflow: {0}")]
    ScheduleOverflow(String),

    #[error("malformed data: {0}")]
    MalformedData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
