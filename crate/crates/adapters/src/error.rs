use std::path::PathBuf;

use insertkit_core::CoreError;
use thiserror::Error;

pub type Result<T, E = AdapterError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("model `{model}` failed: {reason}")]
    Model { model: String, reason: String },

    #[error(
        "weights for role `{role}` ({identifier}@{revision}) not found under {}; run `insertkit fetch-models --role {role}`",
        path.display()
    )]
    MissingWeights {
        role: String,
        identifier: String,
        revision: String,
        path: PathBuf,
    },

    #[error("registry: {0}")]
    Registry(String),

    #[error("download of {url} failed: {reason}")]
    Download { url: String, reason: String },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AdapterError {
    pub fn param(msg: impl Into<String>) -> Self {
        AdapterError::Parameter(msg.into())
    }

    pub fn model(model: impl Into<String>, reason: impl std::fmt::Display) -> Self {
        AdapterError::Model {
            model: model.into(),
            reason: reason.to_string(),
        }
    }
}

impl From<AdapterError> for CoreError {
    fn from(err: AdapterError) -> Self {
        match err {
            AdapterError::Core(inner) => inner,
            AdapterError::Model { model, reason } => CoreError::Adapter { adapter: model, reason },
            other => CoreError::Adapter {
                adapter: "adapter".into(),
                reason: other.to_string(),
            },
        }
    }
}
