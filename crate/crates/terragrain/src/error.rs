//! Shared error type and the CLI exit-code taxonomy.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Line-oriented parse failure in a text artifact (manifest, CSV, model file).
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Malformed binary file (PNM header/payload).
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    /// Semantic validation failure in otherwise well-formed data.
    #[error("{0}")]
    Data(String),

    /// Numerically degenerate state (zero norms, unsatisfiable clustering, ...).
    #[error("{0}")]
    Numeric(String),

    /// Bad key or value in a run configuration file.
    #[error("config: {0}")]
    Config(String),

    /// Command-line misuse outside of what the argument parser catches.
    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data(message.into())
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric(message.into())
    }

    /// Exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } | Error::Data(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}
