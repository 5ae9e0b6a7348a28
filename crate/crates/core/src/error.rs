use std::io;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum GaeError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("insufficient population: {0}")]
    InsufficientPopulation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, GaeError>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(GaeError::Shape {
            context,
            expected,
            actual,
        })
    }
}
