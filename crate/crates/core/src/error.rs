use thiserror::Error;

/// Errors raised by verimech operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid valuation profile: {0}")]
    InvalidProfile(String),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("agent index {index} out of range for {n} agents")]
    AgentOutOfRange { index: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("approximation ratio undefined: maximum outcome weight is zero")]
    ZeroOptimum,

    #[error("no liars, bot action unreachable")]
    BotUnreachable,

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("invalid metric instance: {0}")]
    InvalidInstance(String),

    #[error("mutation leaves agent {0} truthful")]
    NoOpLie(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
