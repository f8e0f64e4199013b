use std::path::PathBuf;

use crate::adjustment::AuditError;
use crate::client::ClientError;
use crate::dataset::DatasetError;
use crate::metrics::MetricsError;
use crate::perturbation::PerturbationError;
use crate::prompting::PromptError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Report(String),
}

impl From<AuditError> for Error {
    fn from(e: AuditError) -> Self {
        match e {
            AuditError::EmptyVariants => Error::Config(e.to_string()),
            AuditError::Perturbation(e) => Error::Perturbation(e),
            AuditError::Prompt(e) => Error::Prompt(e),
            AuditError::Client(e) => Error::Client(e),
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 config, 2 backend, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Client(ClientError::Config(_)) => 1,
            Error::Client(_) => 2,
            Error::Dataset(DatasetError::Schema(_)) => 1,
            Error::Dataset(_) | Error::Metrics(_) => 3,
            Error::Config(_) | Error::Prompt(_) | Error::Perturbation(_) | Error::Io { .. } | Error::Report(_) => 1,
        }
    }
}
