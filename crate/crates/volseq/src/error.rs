use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error: {0}")]
    Dim(String),

    /// A documented precondition of an operation was violated.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// A loss or state became non-finite; message carries diagnostics.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed on-disk data; message includes the byte offset when known.
    #[error("format error: {0}")]
    Format(String),

    /// Invalid run configuration; `key` is the offending key path.
    #[error("config error at {key}: {msg}")]
    Config { key: String, msg: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
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

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
