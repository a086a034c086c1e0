use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("adapter `{adapter}` failed: {reason}")]
    Adapter { adapter: String, reason: String },

    #[error("malformed latent container: {0}")]
    Container(String),
}

impl CoreError {
    pub fn param(msg: impl Into<String>) -> Self {
        CoreError::Parameter(msg.into())
    }

    pub fn adapter(adapter: impl Into<String>, reason: impl Into<String>) -> Self {
        CoreError::Adapter {
            adapter: adapter.into(),
            reason: reason.into(),
        }
    }
}
