use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use insertkit_pipeline::{PipelineError, PlacementSpec};
use serde::Serialize;
use thiserror::Error;

pub type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),

    #[error("{0}")]
    NotFound(String),

    /// Illegal state transition.
    #[error("{0}")]
    Conflict(String),

    #[error("{message}")]
    Unprocessable {
        message: String,
        suggestion: Option<PlacementSpec>,
    },

    #[error("{0}")]
    TooLarge(String),

    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn conflict(msg: impl Into<String>) -> Self {
        ApiError::Conflict(msg.into())
    }

    pub fn unprocessable(msg: impl Into<String>) -> Self {
        ApiError::Unprocessable {
            message: msg.into(),
            suggestion: None,
        }
    }

    pub fn internal(err: impl std::fmt::Display) -> Self {
        ApiError::Internal(err.to_string())
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::TooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(err: std::io::Error) -> Self {
        ApiError::internal(err)
    }
}

impl From<PipelineError> for ApiError {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::Parameter(msg) => ApiError::unprocessable(msg),
            other => ApiError::internal(other),
        }
    }
}

#[derive(Serialize)]
struct Body<'a> {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    suggestion: Option<&'a PlacementSpec>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let suggestion = match &self {
            ApiError::Unprocessable { suggestion, .. } => suggestion.as_ref(),
            _ => None,
        };
        let body = Body {
            error: self.to_string(),
            suggestion,
        };
        (self.status(), Json(body)).into_response()
    }
}
