use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use candor_core::extraction::ExtractError;
use candor_core::orchestrator::OrchestratorError;
use candor_core::store::StoreError;
use serde::{Deserialize, Serialize};

/// Seconds clients are asked to wait after a provider outage.
pub const RETRY_AFTER_SECS: u32 = 5;

/// Error body: a machine-readable `code` and a human-readable `message`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub retry_after: Option<u32>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            retry_after: None,
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "Validation", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", message)
    }

    pub fn unavailable(message: impl Into<String>) -> Self {
        ApiError {
            retry_after: Some(RETRY_AFTER_SECS),
            ..Self::new(StatusCode::SERVICE_UNAVAILABLE, "ProviderUnavailable", message)
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        let mut resp = (self.status, Json(body)).into_response();
        if let Some(secs) = self.retry_after {
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(secs));
        }
        resp
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        use OrchestratorError as E;
        let msg = e.to_string();
        match e {
            E::SessionNotFound(_) => Self::not_found(msg),
            E::InvalidCase(_) => Self::new(StatusCode::BAD_REQUEST, "InvalidCase", msg),
            E::InvalidInput(_) => Self::validation(msg),
            E::SessionEnded(_) => Self::new(StatusCode::CONFLICT, "SessionEnded", msg),
            E::TurnInFlight(_) => Self::new(StatusCode::CONFLICT, "TurnInFlight", msg),
            E::NoTurns => Self::new(StatusCode::CONFLICT, "NoTurns", msg),
            E::Aborted { provider: Some(_), .. } | E::Provider(_) => Self::unavailable(msg),
            E::Aborted { provider: None, .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "TurnAborted", msg),
            E::Extract(x) => x.into(),
            E::Store(StoreError::BadId(_) | StoreError::NotFound(_)) => Self::not_found(msg),
            E::Store(_) => Self::internal(msg),
        }
    }
}

impl From<ExtractError> for ApiError {
    fn from(e: ExtractError) -> Self {
        let msg = e.to_string();
        match e {
            ExtractError::EmptyDescription => Self::validation(msg),
            ExtractError::Invalid(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ExtractionFailed", msg),
            ExtractError::Provider(_) => Self::unavailable(msg),
        }
    }
}
