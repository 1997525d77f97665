use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated an input contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A loss evaluation produced a non-finite value while perturbing one weight.
    #[error("non-finite loss {value} while perturbing weight {index}")]
    NonFiniteLoss { index: usize, value: f64 },

    /// The federated round machinery received inconsistent data.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A configuration file failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A persisted artifact (snapshot, update log, history file) failed to parse.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
