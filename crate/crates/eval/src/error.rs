use std::fmt;
use std::path::PathBuf;

use insertkit_adapters::AdapterError;
use insertkit_pipeline::PipelineError;
use thiserror::Error;

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// A problem with one benchmark sample.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SampleError {
    pub sample_id: String,
    pub reason: String,
}

impl fmt::Display for SampleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.sample_id, self.reason)
    }
}

fn list<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| format!("\n  {i}")).collect()
}

fn paths(items: &[PathBuf]) -> String {
    items.iter().map(|p| format!("\n  {}", p.display())).collect()
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{} required input(s) missing:{}", .0.len(), paths(.0))]
    MissingInputs(Vec<PathBuf>),

    #[error("{} sample(s) failed:{}", .0.len(), list(.0))]
    Samples(Vec<SampleError>),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Adapter(#[from] AdapterError),

    #[error(transparent)]
    Pipeline(#[from] PipelineError),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EvalError {
    pub fn param(msg: impl Into<String>) -> Self {
        EvalError::Parameter(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl fmt::Display) -> Self {
        EvalError::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
