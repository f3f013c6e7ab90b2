use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the summarization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to load video {video_id}: {reason}")]
    Load { video_id: String, reason: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("training diverged at iteration {iteration}, stage {stage}, epoch {epoch}: {reason}")]
    Training {
        iteration: usize,
        stage: String,
        epoch: usize,
        reason: String,
    },
    #[error("lookup error: {0}")]
    Lookup(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable code for the error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Load { .. } => "E_LOAD",
            Error::Schema(_) => "E_SCHEMA",
            Error::Data(_) => "E_DATA",
            Error::Config(_) => "E_CONFIG",
            Error::Input(_) => "E_INPUT",
            Error::Numeric(_) => "E_NUMERIC",
            Error::Contract(_) => "E_CONTRACT",
            Error::Precondition(_) => "E_PRECONDITION",
            Error::Training { .. } => "E_TRAINING",
            Error::Lookup(_) => "E_LOOKUP",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
