use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use zcbm_core::pipeline::PipelineError;
use zcbm_core::regress::RegressError;
use zcbm_core::retrieval::RetrievalError;
use zcbm_core::vecstore::VecError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    DimensionMismatch,
    ProviderError,
    Expired,
    Internal,
}

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
    #[serde(skip, default)]
    status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.is_empty() {
            message = status.canonical_reason().unwrap_or("error").to_string();
        }
        Self {
            code,
            message,
            detail: None,
            status: status.as_u16(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, ErrorCode::BadRequest, message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, ErrorCode::NotFound, message)
    }

    pub fn provider(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, ErrorCode::ProviderError, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal, message)
    }

    fn dimension_mismatch(expected: usize, actual: usize) -> Self {
        let mut e = Self::new(
            StatusCode::BAD_REQUEST,
            ErrorCode::DimensionMismatch,
            format!("expected an embedding of dimension {expected}, got {actual}"),
        );
        e.detail = Some(json!({ "expected": expected, "actual": actual }));
        e
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<VecError> for ApiError {
    fn from(e: VecError) -> Self {
        match e {
            VecError::DimensionMismatch { expected, actual } => Self::dimension_mismatch(expected, actual),
            VecError::NonFinite(_) => Self::unprocessable(e.to_string()),
            VecError::ZeroNorm | VecError::Empty => Self::bad_request(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        use PipelineError as P;
        match e {
            P::DimensionMismatch { expected, actual }
            | P::Retrieval(RetrievalError::DimensionMismatch { expected, actual })
            | P::Regress(RegressError::DimensionMismatch { expected, actual }) => {
                Self::dimension_mismatch(expected, actual)
            }
            P::Vector(v) | P::Retrieval(RetrievalError::Format(v)) => v.into(),
            P::UnknownSession(_) | P::UnknownConcept(_) => Self::not_found(e.to_string()),
            P::ExpiredSession(_) => Self::new(StatusCode::GONE, ErrorCode::Expired, e.to_string()),
            P::Provider(_) => Self::provider(e.to_string()),
            P::InvalidParameter(_)
            | P::EmptySamples
            | P::EmptyClassSet
            | P::Regress(_)
            | P::Retrieval(RetrievalError::InvalidK) => Self::bad_request(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}
