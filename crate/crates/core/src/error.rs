use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid frame data: {0}")]
    InvalidFrame(String),

    #[error("empty frame sequence")]
    EmptySequence,

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("image too small: {0}")]
    TooSmall(String),

    #[error("symbol {symbol} cannot be represented by the model")]
    SymbolOutOfRange { symbol: i64 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("malformed payload: {0}")]
    Malformed(String),

    #[error("checksum mismatch: {0}")]
    Checksum(String),

    #[error("timestep {n} outside 0..={max}")]
    Timestep { n: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
