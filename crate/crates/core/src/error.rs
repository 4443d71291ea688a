//! Crate-wide error type. Variants map onto the CLI's exit-code contract:
//! `Usage` -> exit 1, everything else -> exit 2.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad invocation: unknown flags, invalid flag values, missing arguments.
    #[error("{0}")]
    Usage(String),
    /// Malformed or inconsistent input data (files, hypergraphs, shapes).
    #[error("{0}")]
    Data(String),
    /// Numeric failure: overflow, divergence, non-convergence, NaN.
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Stable stderr prefix for this error class.
    pub fn prefix(&self) -> &'static str {
        match self {
            Error::Usage(_) => "USAGE:",
            Error::Data(_) | Error::Io(_) => "DATA:",
            Error::Numeric(_) => "NUMERIC:",
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            _ => 2,
        }
    }
}
