use declip_core::Error as CoreError;
use declip_model::ModelError;
use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::InvalidArgument(_) => EXIT_USAGE,
        CoreError::Numerical(_) | CoreError::DivisionGuard(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Config(_) | ModelError::InvalidArgument(_) => EXIT_USAGE,
        ModelError::Numerical(_) | ModelError::Autodiff(_) => EXIT_NUMERICAL,
        ModelError::Core(c) => core_code(c),
        ModelError::Checkpoint(_) | ModelError::Data(_) | ModelError::Io(_) => EXIT_DATA,
    }
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Usage(_) => EXIT_USAGE,
            HarnessError::Model(e) => model_code(e),
            HarnessError::Core(e) => core_code(e),
            HarnessError::Data(_) | HarnessError::Csv(_) | HarnessError::Io(_) => EXIT_DATA,
        }
    }
}

/// Exit status for an error raised anywhere in the tool. Errors that carry
/// no classification are treated as data errors.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<HarnessError>() {
            return e.exit_code();
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_code(e);
        }
    }
    EXIT_DATA
}
