use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {lhs:?} vs {rhs:?}")]
    Dimension {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected}, found {found}")]
    BadMagic {
        path: String,
        expected: String,
        found: String,
    },

    #[error("unsupported version in {path}: found {found}, expected {expected}")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("truncated file {path}: needed {needed} bytes, got {got}")]
    Truncated {
        path: String,
        needed: usize,
        got: usize,
    },

    #[error("checkpoint shape disagreement: {0}")]
    CheckpointShape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
