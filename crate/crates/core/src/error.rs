use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is malformed (empty input, wrong length, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A value lies outside the domain of a mathematical operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested size exceeds the configured resource guard.
    #[error("resource bound exceeded: {0}")]
    BoundedResource(String),

    /// Configuration failed validation before any work started.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Inputs that must share axes or dimensions do not.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A factorization or distribution update broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed content in a file being read.
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line driver: 1 validation, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 2,
            Error::Io { .. } | Error::Parse { .. } => 3,
            _ => 1,
        }
    }
}
