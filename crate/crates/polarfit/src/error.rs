//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum Error {
    /// I/O failure, annotated with the path involved.
    Io { path: PathBuf, source: std::io::Error },
    /// A file existed but could not be parsed.
    Parse { path: PathBuf, detail: String },
    /// Invalid configuration (unknown key, bad value, missing setting).
    Config(String),
    /// Inputs violate a contract: shape mismatch, bad mesh, degenerate data.
    Data(String),
    /// Non-finite losses or gradients; optimization cannot continue.
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Error {
        Error::Parse { path: path.into(), detail: detail.into() }
    }

    pub fn config(msg: impl Into<String>) -> Error {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Error {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Error {
        Error::Numerical(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {}", path.display(), source),
            Error::Parse { path, detail } => write!(f, "{}: {}", path.display(), detail),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
