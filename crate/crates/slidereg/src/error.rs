//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction, I/O, and registration routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("buffer length {got}, expected {expected} for {width}x{height}")]
    BufferSize {
        got: usize,
        expected: usize,
        width: usize,
        height: usize,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("singular transform (det = {det:e})")]
    SingularTransform { det: f64 },

    #[error("singular stain matrix (det = {det:e})")]
    SingularStainMatrix { det: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("corrupt image: {0}")]
    CorruptImage(String),

    #[error("unsupported image format: {0}")]
    UnsupportedImage(String),

    #[error("bad header: {0}")]
    BadHeader(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("non-finite objective value (degenerate inputs)")]
    NonFiniteObjective,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
