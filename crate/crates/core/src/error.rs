use alloc::string::String;

/// Errors raised by the fitting and generation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("mask entry M[{row}][{col}] = {value} is not 0 or 1")]
    InvalidMask { row: usize, col: usize, value: u8 },
    #[error("non-finite observed value at row {row}, column {col}")]
    NonFiniteObserved { row: usize, col: usize },
    #[error("non-finite target at row {row}")]
    NonFiniteTarget { row: usize },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("empty dataset")]
    Empty,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("wrong model kind: expected {expected}, got {got}")]
    WrongMode { expected: &'static str, got: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
