//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by graph construction, the loss pipeline, the optimizer,
/// data handling, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands have incompatible dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A parameter lies outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An input is structurally valid but numerically unusable
    /// (for example a zero feature row that cannot be normalized).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A config or data file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A persisted artifact failed an integrity or format check.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A non-finite value appeared where finite arithmetic is required.
    #[error("numeric fault: {0}")]
    Numeric(String),

    /// Underlying I/O failure, annotated with the path that caused it.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an I/O error with the offending path for actionable messages.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
