use alloc::string::String;
use core::fmt;

/// Errors produced by the algorithmic core.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// A shape, length, or value precondition was violated.
    InvalidArgument(String),
    /// An index fell outside the valid range.
    OutOfRange(String),
    /// A segment descriptor would break the gap-free, overlap-free tiling.
    TilingViolation(String),
    /// A computation produced a non-finite value.
    NumericFailure { step: Option<usize>, message: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            CoreError::OutOfRange(msg) => write!(f, "out of range: {msg}"),
            CoreError::TilingViolation(msg) => write!(f, "tiling violation: {msg}"),
            CoreError::NumericFailure { step: Some(s), message } => {
                write!(f, "numeric failure at step {s}: {message}")
            }
            CoreError::NumericFailure { step: None, message } => {
                write!(f, "numeric failure: {message}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
