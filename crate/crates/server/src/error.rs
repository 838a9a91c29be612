use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_argument", message)
    }

    pub fn unknown_session(id: u64) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}"))
    }

    pub fn codec_not_ready() -> Self {
        Self::new(StatusCode::CONFLICT, "codec_not_ready", "semantic features are not distilled yet")
    }

    pub fn stale_revision(sent: u64, current: u64) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "stale_revision",
            format!("edit targets revision {sent}, scene is at {current}"),
        )
    }
}

impl From<splatedit::Error> for ApiError {
    fn from(e: splatedit::Error) -> Self {
        use splatedit::Error as E;
        let (status, code) = match &e {
            E::InvalidState(_) => (StatusCode::CONFLICT, "invalid_state"),
            E::Backend { .. } => (StatusCode::BAD_GATEWAY, "backend_error"),
            E::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            _ => (StatusCode::BAD_REQUEST, "invalid_argument"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}
