use std::path::PathBuf;

/// Errors raised by tensor ops, the tape, file I/O and the training pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand extents do not satisfy an op's shape contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A documented precondition was violated (e.g. non-scalar loss, even window).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value left the representable range of `f64` (e.g. `exp` overflow).
    #[error("numeric range error: {0}")]
    NumericRange(String),

    /// Malformed file contents (bad magic, truncated payload, bad manifest line).
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Bad configuration key or value.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
