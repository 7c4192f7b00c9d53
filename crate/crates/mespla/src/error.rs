//! Crate-wide error type and exit-code mapping for the CLI.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the message names the offending field.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor shape mismatch; carries both offending shapes.
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A computation produced NaN or infinity.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// API contract violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// Dataset-level problem (empty split, missing samples).
    #[error("data error: {0}")]
    Data(String),

    /// On-disk file does not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// Stored checksum does not match the file contents.
    #[error("corrupt file {file}: {reason}")]
    Corruption { file: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit status: 1 for configuration/contract misuse, 2 for i/o,
    /// corruption, and malformed files.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Corruption { .. } | Error::Format(_) => 2,
            _ => 1,
        }
    }
}
