use axum::extract::rejection::BytesRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::Serialize;

use evsearch_core::Error;

/// Error response: `{"error": ..., "detail": ...}` with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub error: &'static str,
    pub detail: String,
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    detail: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            error,
            detail: detail.into(),
        }
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad request", detail)
    }

    pub fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not found", detail)
    }

    pub fn no_index(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "no index", detail)
    }

    pub fn stale_index() -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "stale index",
            "the corpus was replaced after this index was built; POST /index to rebuild",
        )
    }

    pub fn missing(what: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, what, detail)
    }

    fn from_rejection(status: StatusCode, text: String) -> Self {
        if status == StatusCode::PAYLOAD_TOO_LARGE {
            Self::new(status, "payload too large", text)
        } else {
            Self::bad_request(text)
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::AggregationMismatch { .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "aggregation mismatch", e.to_string())
            }
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

impl From<BytesRejection> for ApiError {
    fn from(r: BytesRejection) -> Self {
        Self::from_rejection(r.status(), r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::to_vec(&Body {
            error: self.error,
            detail: &self.detail,
        })
        .expect("serializable");
        (
            self.status,
            [(axum::http::header::CONTENT_TYPE, "application/json")],
            body,
        )
            .into_response()
    }
}
