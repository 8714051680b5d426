use std::fmt;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or volume shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A scalar argument is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// An operation was called in a state where it is not defined.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Inconsistent or incomplete configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed file contents.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    /// A loss or intermediate value became NaN or infinite.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl fmt::Display) -> Self {
        Error::Dimension(msg.to_string())
    }

    pub(crate) fn param(msg: impl fmt::Display) -> Self {
        Error::Parameter(msg.to_string())
    }

    pub(crate) fn contract(msg: impl fmt::Display) -> Self {
        Error::Contract(msg.to_string())
    }

    pub(crate) fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub(crate) fn format(offset: u64, msg: impl fmt::Display) -> Self {
        Error::Format {
            offset,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn io(context: impl fmt::Display, source: std::io::Error) -> Self {
        Error::Io {
            context: context.to_string(),
            source,
        }
    }
}
