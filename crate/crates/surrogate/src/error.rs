use thiserror::Error;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error(transparent)]
    Core(#[from] topo_core::Error),
    #[error(transparent)]
    Nn(#[from] topo_nn::NnError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("missing model: {0}")]
    MissingModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SurrogateError>;

impl SurrogateError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SurrogateError::InvalidArgument(msg.into())
    }
}
