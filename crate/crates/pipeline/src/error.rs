use std::path::PathBuf;

use insertkit_adapters::AdapterError;
use insertkit_core::CoreError;
use thiserror::Error;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<PipelineError>,
    },

    #[error(transparent)]
    Adapter(#[from] AdapterError),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("image `{}`: {reason}", path.display())]
    Image { path: PathBuf, reason: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("replay diverged: {0}")]
    ReplayMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn param(msg: impl Into<String>) -> Self {
        PipelineError::Parameter(msg.into())
    }

    /// Stage label of the innermost labelled failure.
    pub fn stage(&self) -> Option<&str> {
        match self {
            PipelineError::Stage { stage, source } => source.stage().or(Some(stage)),
            _ => None,
        }
    }
}

/// Attaches a stage label to errors.
pub trait StageContext<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T, E: Into<PipelineError>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| match e.into() {
            already @ PipelineError::Stage { .. } => already,
            other => PipelineError::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        })
    }
}
