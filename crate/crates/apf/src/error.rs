//! Error type shared across the pipeline, mapped onto process exit codes by
//! the CLI (2 validation, 3 io, 4 numerical).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApfError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl ApfError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> ApfError {
        ApfError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            ApfError::Parse(_) | ApfError::Validation(_) => 2,
            ApfError::Io { .. } => 3,
            ApfError::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, ApfError>;
