use cpm_core::CpmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Numeric(String),

    /// One or more checks of a suite failed; the message names them.
    #[error("suite failed: {0}")]
    SuiteFailure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::SuiteFailure(_) => 4,
        }
    }
}

impl From<CpmError> for CliError {
    fn from(e: CpmError) -> Self {
        match e {
            CpmError::Validation(_)
            | CpmError::Serialization(_)
            | CpmError::Precondition(_)
            | CpmError::Capability { .. } => CliError::Validation(e.to_string()),
            CpmError::NumericDomain(_)
            | CpmError::Domain(_)
            | CpmError::ModelAssumption { .. }
            | CpmError::IllConditioned { .. }
            | CpmError::Divergence(_)
            | CpmError::InsufficientSamples(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}
