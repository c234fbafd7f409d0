use std::fmt;

/// Errors produced by the restoration library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands disagree in size, or an operand is too small for the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A linear system or frequency-domain division is ill-posed.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An iterative procedure blew up (NaN loss, rising energy).
    #[error("diverged: {0}")]
    Diverged(String),

    /// A model was trained for a different configuration than requested.
    #[error("incompatible model: {0}")]
    IncompatibleModel(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl fmt::Display) -> Self {
        Error::Dimension(msg.to_string())
    }

    pub(crate) fn arg(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }

    pub(crate) fn format(what: &'static str, detail: impl fmt::Display) -> Self {
        Error::Format {
            what,
            detail: detail.to_string(),
        }
    }
}
