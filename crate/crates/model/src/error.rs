use thiserror::Error;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("bad input data: {0}")]
    Data(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Autodiff(#[from] declip_autodiff::AutodiffError),

    #[error(transparent)]
    Core(#[from] declip_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn config_err(msg: impl Into<String>) -> ModelError {
    ModelError::Config(msg.into())
}
