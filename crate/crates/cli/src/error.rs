use mfmm_core::ModelError;
use thiserror::Error;

/// Failure classes of a run; each maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("{0}")]
    NonConvergence(ModelError),

    #[error("monte carlo gate failed: {0}")]
    McGate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Input(_) => 2,
            Self::NonConvergence(_) => 3,
            Self::McGate(_) => 4,
            Self::Io(_) => 1,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonConvergence { .. } => Self::NonConvergence(e),
            ModelError::InvalidMass(_) | ModelError::Domain { .. } => Self::Input(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}
