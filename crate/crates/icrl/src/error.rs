use thiserror::Error;

/// Errors surfaced by the library's public operations.
#[derive(Debug, Error)]
pub enum IcrlError {
    /// Tensor or network dimensions do not line up.
    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch { context: String, detail: String },

    /// A loss, parameter, or gradient stopped being finite.
    #[error("non-finite value in {context}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { context: String, step: Option<u64> },

    /// An operation was asked to run on inputs that violate its preconditions.
    #[error("invalid argument for {context}: {detail}")]
    InvalidArgument { context: String, detail: String },

    /// Replay buffer is not yet filled to its sampling threshold.
    #[error("replay buffer under-filled: {size} episodes stored, {min_fill} required")]
    BufferUnderfilled { size: usize, min_fill: usize },

    /// A run configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Problems reading or writing run artifacts.
    #[error("io error in {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// A file had the wrong format (config, checkpoint, tabular instance, metrics).
    #[error("parse error in {context}: {detail}")]
    Parse { context: String, detail: String },
}

impl IcrlError {
    pub fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        IcrlError::ShapeMismatch {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn invalid(context: impl Into<String>, detail: impl Into<String>) -> Self {
        IcrlError::InvalidArgument {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        IcrlError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, detail: impl Into<String>) -> Self {
        IcrlError::Parse {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, IcrlError>;
