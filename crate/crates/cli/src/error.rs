use sctlab_core::SctError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Core(SctError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<SctError> for CliError {
    fn from(e: SctError) -> Self {
        match e {
            SctError::Divergence { epoch, step, loss } => CliError::Divergence { epoch, step, loss },
            SctError::Format(msg) => CliError::Input(msg),
            other => CliError::Core(other),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e.to_string()))
    }
}

impl CliError {
    /// 0 success, 2 config/input, 3 divergence, 4 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Divergence { .. } => 3,
            CliError::Verification(_) => 4,
            CliError::Config(_) | CliError::Input(_) | CliError::Core(_) => 2,
            CliError::Io(_) => 2,
        }
    }
}
