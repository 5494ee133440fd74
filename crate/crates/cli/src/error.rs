use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing stage output: {0}")]
    MissingStage(String),
    #[error("{0:#}")]
    Data(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingStage(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Converts any error into a data error.
pub(crate) fn data<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Data(e.into())
}
