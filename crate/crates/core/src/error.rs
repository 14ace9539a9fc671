use alloc::string::String;

/// Errors raised by the imputation library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("step rate requested for a block with zero wear minutes (hour {0})")]
    NoWearTime(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("standard deviation must be positive, got {0}")]
    NonPositiveStd(f64),

    #[error("hour index {index} out of range for series of length {len}")]
    HourOutOfRange { index: usize, len: usize },

    #[error("the center cell of the context window has no relative index")]
    CenterCell,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty attention set")]
    EmptyAttentionSet,

    #[error("no observed context for hour {0}")]
    NoObservedContext(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
