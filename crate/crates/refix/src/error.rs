use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between operands. Carries both shapes.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A caller broke an operation's contract (bad index, bad parameter, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed tensor file or manifest.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset-level problem (missing file, inconsistent sizes, bad labels).
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced NaN or Inf where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
