use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = ApiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("session {0} is busy with another mutation")]
    Busy(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("replay of session {id} diverged by {distance}")]
    ReplayMismatch { id: String, distance: f32 },
    #[error(transparent)]
    Core(#[from] latentbrush::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("worker task failed: {0}")]
    Join(String),
}

impl ApiError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        use latentbrush::Error as E;
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::UnknownModel(_) => "unknown_model",
            ApiError::Busy(_) => "busy",
            ApiError::BadRequest(_) | ApiError::Json(_) => "bad_request",
            ApiError::Config(_) => "config",
            ApiError::ReplayMismatch { .. } => "replay_mismatch",
            ApiError::Core(E::InvalidConstraint(_)) => "invalid_constraint",
            ApiError::Core(E::Image(_) | E::UnreadableImage { .. }) => "bad_image",
            ApiError::Core(E::InvalidArgument(_) | E::Json(_) | E::UnsupportedResolution(_)) => "bad_request",
            ApiError::Core(_) | ApiError::Io(_) | ApiError::Join(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self.code() {
            "not_found" => StatusCode::NOT_FOUND,
            "busy" => StatusCode::CONFLICT,
            "internal" | "config" | "replay_mismatch" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        }
    }
}

/// Body of every error response.
#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody {
            error: self.code().to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}
