use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use activellm_core::session::SessionError;

/// Error body: `{"error": {"code": "...", "message": "..."}}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session `{id}`"))
    }

    pub fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { error: ErrorDetail { code: self.code.to_string(), message: self.message.clone() } }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::Config(_) => Self::invalid("invalid_config", message),
            SessionError::OpenTask => Self::new(StatusCode::CONFLICT, "task_open", message),
            SessionError::NoOpenTask => Self::new(StatusCode::CONFLICT, "no_open_task", message),
            SessionError::BudgetExhausted(_) => Self::new(StatusCode::GONE, "budget_exhausted", message),
            SessionError::PoolExhausted => Self::new(StatusCode::GONE, "pool_exhausted", message),
            SessionError::NotInTask(_) => Self::invalid("index_not_in_task", message),
            SessionError::LabelDomain { .. } => Self::invalid("label_not_in_label_space", message),
            SessionError::Oracle(_) | SessionError::Strategy(_) => {
                Self::new(StatusCode::BAD_GATEWAY, "query_failed", message)
            }
            SessionError::Invariant(_) => Self::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}
