//! The structured error body every failing endpoint returns.

use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use meditools_core::catalog::CatalogError;
use meditools_core::derm::DermError;
use meditools_core::llm::LlmError;
use meditools_core::news::NewsError;
use meditools_core::pubmed::PubmedError;
use meditools_core::session::SessionError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::mailer::MailerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip, default = "internal_status")]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

fn internal_status() -> StatusCode {
    StatusCode::INTERNAL_SERVER_ERROR
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.to_string(), message: message.into(), detail: None }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }

    pub fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
    }

    pub fn method_not_allowed() -> Self {
        Self::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
    }

    pub fn internal() -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
    }

    /// Replaces every occurrence of each secret in the message and detail.
    pub fn redact(mut self, secrets: &[String]) -> Self {
        let scrub = |s: &str| {
            secrets
                .iter()
                .filter(|k| !k.is_empty())
                .fold(s.to_string(), |acc, k| acc.replace(k.as_str(), "[redacted]"))
        };
        self.message = scrub(&self.message);
        if let Some(d) = self.detail.take() {
            let text = scrub(&d.to_string());
            self.detail = Some(serde_json::from_str(&text).unwrap_or(Value::String(text)));
        }
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::warn!(code = %self.code, message = %self.message, "request failed");
        }
        let status = self.status;
        let mut resp = (status, Json(self)).into_response();
        resp.extensions_mut().insert(ErrorMarker);
        resp
    }
}

/// Set on responses built from an [`ApiError`] so middleware can redact them.
#[derive(Debug, Clone, Copy)]
pub struct ErrorMarker;

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let (status, code) = match &r {
            JsonRejection::MissingJsonContentType(_) => (StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media_type"),
            JsonRejection::JsonSyntaxError(_) => (StatusCode::BAD_REQUEST, "malformed_json"),
            JsonRejection::JsonDataError(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_body"),
            JsonRejection::BytesRejection(_) if r.status() == StatusCode::PAYLOAD_TOO_LARGE => {
                (StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large")
            }
            _ => (r.status(), "unreadable_body"),
        };
        ApiError::new(status, code, r.body_text())
    }
}

impl From<MultipartRejection> for ApiError {
    fn from(r: MultipartRejection) -> Self {
        let status = r.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "payload_too_large" } else { "malformed_multipart" };
        ApiError::new(status, code, r.body_text())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::UnknownSession => (StatusCode::UNAUTHORIZED, "unknown_session"),
            SessionError::InvalidKey(_) => (StatusCode::BAD_REQUEST, "invalid_session_key"),
            SessionError::NonFiniteNumber => (StatusCode::UNPROCESSABLE_ENTITY, "non_finite_number"),
            SessionError::Encode(_) | SessionError::Decode(_) | SessionError::Snapshot(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "session_state")
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        let (status, code) = match &e {
            LlmError::UnknownModel(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_model"),
            LlmError::InvalidRequest(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
            LlmError::Registry(_) => (StatusCode::INTERNAL_SERVER_ERROR, "registry"),
            LlmError::ProviderUnavailable { .. } => (StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable"),
            LlmError::AuthFailure { .. } => (StatusCode::BAD_GATEWAY, "provider_auth"),
            LlmError::ContextTooLong { .. } => (StatusCode::PAYLOAD_TOO_LARGE, "context_too_long"),
            LlmError::MalformedResponse { .. } => (StatusCode::BAD_GATEWAY, "provider_malformed"),
            LlmError::UnsupportedFormat(_) => (StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_audio"),
            LlmError::EmptyText => (StatusCode::UNPROCESSABLE_ENTITY, "empty_text"),
            LlmError::Template(_) => (StatusCode::INTERNAL_SERVER_ERROR, "template"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        // paths on the server are nobody's business
        let msg = match &e {
            CatalogError::Io { .. } => "case image could not be read".to_string(),
            _ => "image catalog unavailable".to_string(),
        };
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "catalog", msg)
    }
}

impl From<DermError> for ApiError {
    fn from(e: DermError) -> Self {
        let simple = |status, code: &str| ApiError::new(status, code, e.to_string());
        match &e {
            DermError::NoActiveCase => simple(StatusCode::NOT_FOUND, "no_active_case"),
            DermError::ModelNotSelected => simple(StatusCode::CONFLICT, "model_not_selected"),
            DermError::ActionNotAvailable { action, phase } => simple(StatusCode::CONFLICT, "action_not_available")
                .with_detail(json!({ "action": action, "phase": phase })),
            DermError::EmptyTranscript => simple(StatusCode::CONFLICT, "empty_transcript"),
            DermError::InvalidInput(_) => simple(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input"),
            DermError::LabFormat(_) => simple(StatusCode::BAD_GATEWAY, "lab_format"),
            DermError::EmptySection(_) => simple(StatusCode::BAD_GATEWAY, "empty_section"),
            DermError::Config(_) => simple(StatusCode::INTERNAL_SERVER_ERROR, "case_config"),
            DermError::Catalog(c) => c.clone().into(),
            DermError::Llm(l) => l.clone().into(),
            DermError::Session(s) => s.clone().into(),
        }
    }
}

impl From<PubmedError> for ApiError {
    fn from(e: PubmedError) -> Self {
        let simple = |status, code: &str| ApiError::new(status, code, e.to_string());
        match &e {
            PubmedError::InvalidParams(_) => simple(StatusCode::UNPROCESSABLE_ENTITY, "invalid_search"),
            PubmedError::InvalidId(_) => simple(StatusCode::UNPROCESSABLE_ENTITY, "invalid_id"),
            PubmedError::EmptyPmidList => simple(StatusCode::UNPROCESSABLE_ENTITY, "empty_pmid_list"),
            PubmedError::UpstreamUnavailable(_) => simple(StatusCode::SERVICE_UNAVAILABLE, "upstream_unavailable"),
            PubmedError::MalformedResponse(_) => simple(StatusCode::BAD_GATEWAY, "upstream_malformed"),
            PubmedError::MalformedXml { line, column, .. } => {
                simple(StatusCode::BAD_GATEWAY, "malformed_xml").with_detail(json!({ "line": line, "column": column }))
            }
            PubmedError::NotFound(_) => simple(StatusCode::NOT_FOUND, "article_not_found"),
            PubmedError::NotPmcEligible(_) => simple(StatusCode::CONFLICT, "not_pmc_eligible"),
            PubmedError::ExtractionFailed { .. } => simple(StatusCode::BAD_GATEWAY, "extraction_failed"),
            PubmedError::ContextTooLong { chars, .. } => {
                simple(StatusCode::PAYLOAD_TOO_LARGE, "context_too_long").with_detail(json!({ "chars": chars }))
            }
            PubmedError::Llm(l) => l.clone().into(),
        }
    }
}

impl From<NewsError> for ApiError {
    fn from(e: NewsError) -> Self {
        let simple = |status, code: &str| ApiError::new(status, code, e.to_string());
        match &e {
            NewsError::InvalidParams(_) => simple(StatusCode::UNPROCESSABLE_ENTITY, "invalid_news_request"),
            NewsError::UpstreamUnavailable(_) => simple(StatusCode::SERVICE_UNAVAILABLE, "upstream_unavailable"),
            NewsError::FetchFailed { .. } => simple(StatusCode::BAD_GATEWAY, "fetch_failed"),
            NewsError::EmptySummary(_) => simple(StatusCode::BAD_GATEWAY, "empty_summary"),
            NewsError::Llm(l) => l.clone().into(),
        }
    }
}

impl From<MailerError> for ApiError {
    fn from(e: MailerError) -> Self {
        match &e {
            MailerError::Unavailable(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "mailer_unavailable", e.to_string()),
            MailerError::Invalid(_) => ApiError::validation(e.to_string()),
        }
    }
}
