//! Chat-completion and embedding clients.

mod http;
mod mock;
mod registry;
mod retry;

use std::fmt;
use std::time::Duration;

use flock_core::catalog::ModelParams;
use serde::{Deserialize, Serialize};

pub use http::HttpProvider;
pub use mock::{Latency, Matcher, MockProvider, MockRequest, Responder, Rule};
pub use registry::{ModelInfo, ProviderConfig, ProviderKind, Registry, RegistryError};
pub use retry::{RetryPolicy, Retrying, Sleeper};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model_id: String,
    /// Static meta-prompt prefix, sent as the system message.
    pub system_text: String,
    /// Serialized tuples, sent as the user message.
    pub user_text: String,
    pub params: ModelParams,
    pub json_mode: bool,
    /// Tuples carried by `user_text`. Not sent on the wire.
    #[serde(skip)]
    pub tuple_count: usize,
}

impl ChatRequest {
    pub fn estimated_tokens(&self) -> usize {
        flock_core::prompt::estimate_tokens(&self.system_text)
            + flock_core::prompt::estimate_tokens(&self.user_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    ContextOverflow,
    RateLimited,
    Transient,
    Fatal,
}

impl ErrorKind {
    pub fn is_retryable(self) -> bool {
        matches!(self, ErrorKind::RateLimited | ErrorKind::Transient)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ProviderError {
    pub kind: ErrorKind,
    pub message: String,
}

impl fmt::Display for ProviderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl ProviderError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ProviderError {
            kind,
            message: message.into(),
        }
    }
}

/// Phrases providers use when a request does not fit the context window.
const OVERFLOW_PATTERNS: &[&str] = &[
    "context_length_exceeded",
    "maximum context length",
    "context window",
    "too many tokens",
    "prompt is too long",
    "reduce the length",
];

pub fn is_overflow_message(message: &str) -> bool {
    let m = message.to_ascii_lowercase();
    OVERFLOW_PATTERNS.iter().any(|p| m.contains(p))
}

/// Maps an HTTP status and body to an error kind.
pub fn classify_status(status: u16, body: &str) -> ErrorKind {
    if is_overflow_message(body) {
        return ErrorKind::ContextOverflow;
    }
    match status {
        429 => ErrorKind::RateLimited,
        408 | 409 | 500..=599 => ErrorKind::Transient,
        _ => ErrorKind::Fatal,
    }
}

/// A chat and embedding endpoint. Implementations are shared across worker
/// threads.
pub trait Provider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    /// One vector per text, in input order.
    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

/// Request timeout used when a provider entry does not set one.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overflow_messages_are_detected_before_status() {
        let body = r#"{"error":{"code":"context_length_exceeded","message":"This model's maximum context length is 8192 tokens"}}"#;
        assert_eq!(classify_status(400, body), ErrorKind::ContextOverflow);
        assert_eq!(classify_status(429, "slow down"), ErrorKind::RateLimited);
        assert_eq!(classify_status(503, ""), ErrorKind::Transient);
        assert_eq!(classify_status(401, "bad key"), ErrorKind::Fatal);
    }
}
