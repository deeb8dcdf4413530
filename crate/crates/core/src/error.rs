use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters. The first field names the offending setting.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A file did not match its declared format.
    #[error("malformed {what} `{field}`: {reason}")]
    Format {
        what: &'static str,
        field: String,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("replay memory is empty")]
    EmptyMemory,

    /// Non-finite activations, losses or parameters. The message carries
    /// the epoch/batch/sample coordinates where known.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(
        what: &'static str,
        field: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Format {
            what,
            field: field.into(),
            reason: reason.into(),
        }
    }
}
