use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A history or page refers to data that does not belong to the catalog.
    #[error("inconsistent input: {0}")]
    Inconsistency(String),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint was written for config {found}, current config is {expected}")]
    CheckpointConfigMismatch { found: String, expected: String },

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for the errors that mean a checkpoint cannot be used with this build or config.
    pub fn is_checkpoint_incompatibility(&self) -> bool {
        matches!(
            self,
            Error::CheckpointVersion { .. }
                | Error::CheckpointConfigMismatch { .. }
                | Error::CheckpointCorrupt(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
