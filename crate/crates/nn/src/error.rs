use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid architecture at layer {layer} ({descriptor}): {message}")]
    Build {
        layer: usize,
        descriptor: String,
        message: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training failed at epoch {epoch}: {message}")]
    TrainingFailure { epoch: usize, message: String },
    #[error("bundle format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

impl NnError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NnError::InvalidArgument(msg.into())
    }
}
