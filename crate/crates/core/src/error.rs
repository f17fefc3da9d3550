use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a contract: bad schema, mismatched shapes, bad config.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("checkpoint incompatible: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] dfseg_nn::NnError),
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure is caused by the caller's inputs rather than
    /// by the run itself.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Validation(_) | Error::Load { .. } | Error::EmptyDataset(_) | Error::Checkpoint(_) => true,
            Error::Nn(e) => matches!(
                e,
                dfseg_nn::NnError::Shape(_)
                    | dfseg_nn::NnError::Incompatible { .. }
                    | dfseg_nn::NnError::MissingParam(_)
                    | dfseg_nn::NnError::Format { .. }
            ),
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
