//! Error types shared across the crate.
//!
//! Errors are grouped by the exit-code class the CLI maps them to:
//! configuration/structural misuse (2), numerical breakdown (3), and
//! file-format or I/O failures (4).

use std::fmt;
use std::io;

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration value or key; carries a human-readable location.
    Config(String),
    /// Structural misuse of an API: dimension mismatch, label not found,
    /// inconsistent sizes.
    Structural(String),
    /// Numerical breakdown: singular local system, failed factorization,
    /// non-finite loss.
    Numerical(String),
    /// Malformed model or matrix file; `offset` is the byte offset at which
    /// parsing failed.
    Format { offset: u64, message: String },
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Structural(msg) => write!(f, "structural error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical, 4 I/O and format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Structural(_) => 2,
            Error::Numerical(_) => 3,
            Error::Format { .. } | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
