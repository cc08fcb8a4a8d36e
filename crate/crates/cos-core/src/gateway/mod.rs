//! Uniform access to chat-completions style LLM endpoints.
//!
//! A [`Gateway`] wraps a [`Provider`] (HTTP or scripted mock) with retries,
//! exponential backoff, a parallelism bound and an audit log. All network I/O
//! in the crate happens behind this module.

mod http;
mod mock;
mod script;

pub use http::HttpProvider;
pub use mock::MockProvider;
pub use script::{load_script_file, ScriptFile, ScriptKind, ScriptRule};

use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

/// Environment variable consulted for the API key when the config carries none.
pub const API_KEY_ENV: &str = "COS_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { detail: String, attempts: u32 },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock script exhausted for request: {0}")]
    ScriptExhausted(String),
    #[error("no mock script matched request: {0}")]
    NoScriptMatched(String),
}

impl GatewayError {
    /// Transport failures are retried; everything else fails fast.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::System => f.write_str("system"),
            Role::User => f.write_str("user"),
            Role::Assistant => f.write_str("assistant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, model: impl Into<String>, temperature: f64) -> Self {
        Self {
            messages,
            model: model.into(),
            temperature,
            max_tokens: None,
        }
    }

    /// Message list rendered as "role: content" lines; used for audit records
    /// and mock matching.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| format!("{}: {}", m.role, m.content))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("empty message list".into()));
        }
        if self.messages[0].role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if let Some(m) = self.messages.iter().find(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!(
                "{} message has empty content",
                m.role
            )));
        }
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

fn default_timeout_s() -> f64 {
    30.0
}
fn default_max_retries() -> u32 {
    2
}
fn default_max_parallel() -> usize {
    4
}
fn default_generation_temperature() -> f64 {
    0.7
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_backoff_cap_ms() -> u64 {
    8_000
}

/// Endpoint, credentials and transport policy for one LLM backend.
///
/// `temperature` is used for evaluation/answering calls and
/// `generation_temperature` for summary, question and refinement calls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_generation_temperature")]
    pub generation_temperature: f64,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_cap_ms")]
    pub backoff_cap_ms: u64,
}

impl ProviderConfig {
    pub fn new(endpoint_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            api_key: None,
            model: model.into(),
            timeout_s: default_timeout_s(),
            max_retries: default_max_retries(),
            max_parallel_requests: default_max_parallel(),
            temperature: 0.0,
            generation_temperature: default_generation_temperature(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_cap_ms: default_backoff_cap_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.timeout_s.is_finite() || self.timeout_s <= 0.0 {
            return Err(GatewayError::InvalidRequest("timeout_s must be > 0".into()));
        }
        if self.max_parallel_requests < 1 {
            return Err(GatewayError::InvalidRequest(
                "max_parallel_requests must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Key from the config, falling back to the COS_API_KEY environment
    /// variable; the config value wins.
    pub fn resolved_api_key(&self) -> Option<String> {
        self.api_key
            .clone()
            .or_else(|| std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }

    /// Secret-free digest identifying the backend (endpoint + model).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.endpoint_url.as_bytes());
        hasher.update([0]);
        hasher.update(self.model.as_bytes());
        hex::encode(&hasher.finalize()[..8])
    }
}

/// One `complete()` invocation, successful or not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditEntry {
    pub model: String,
    pub temperature: f64,
    pub request_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub failed: bool,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

/// A chat-completions backend. Implementations perform exactly one request
/// attempt per call; retry policy lives in the [`Gateway`].
#[async_trait]
pub trait Provider: Send + Sync {
    async fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// Short human-readable backend description for logs.
    fn describe(&self) -> String;
}

/// Retrying, parallelism-bounded, audited front door to a provider.
#[derive(Clone)]
pub struct Gateway {
    config: ProviderConfig,
    provider: Arc<dyn Provider>,
    semaphore: Arc<Semaphore>,
    audit: Arc<Mutex<Vec<AuditEntry>>>,
}

impl Gateway {
    pub fn new(config: ProviderConfig, provider: Arc<dyn Provider>) -> Result<Self, GatewayError> {
        config.validate()?;
        let semaphore = Arc::new(Semaphore::new(config.max_parallel_requests));
        Ok(Self {
            config,
            provider,
            semaphore,
            audit: Arc::new(Mutex::new(Vec::new())),
        })
    }

    /// Gateway over an HTTP chat-completions endpoint.
    pub fn http(config: ProviderConfig) -> Result<Self, GatewayError> {
        let provider = Arc::new(HttpProvider::new(&config)?);
        Self::new(config, provider)
    }

    /// A second gateway over the same provider with its own audit log.
    /// Used to keep held-out evaluation traffic out of the chain-building log.
    pub fn split_audit(&self) -> Self {
        Self {
            config: self.config.clone(),
            provider: Arc::clone(&self.provider),
            semaphore: Arc::new(Semaphore::new(self.config.max_parallel_requests)),
            audit: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn provider_description(&self) -> String {
        self.provider.describe()
    }

    /// Sends one request, retrying transient transport failures with jittered
    /// exponential backoff. Every invocation lands in the audit log, failures
    /// flagged; requests rejected by validation are logged with zero attempts.
    pub async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut attempts = 0u32;
        let outcome = match request.validate() {
            Err(err) => Err(err),
            Ok(()) => {
                let _permit = self
                    .semaphore
                    .acquire()
                    .await
                    .expect("gateway semaphore closed");
                loop {
                    attempts += 1;
                    match self.provider.chat(request).await {
                        Ok(response) => break Ok(response),
                        Err(err) if err.is_transient() && attempts <= self.config.max_retries => {
                            let delay = self.backoff_delay(attempts);
                            tracing::warn!(
                                attempt = attempts,
                                max_retries = self.config.max_retries,
                                delay_ms = delay.as_millis() as u64,
                                error = %err,
                                "transient gateway failure, retrying"
                            );
                            tokio::time::sleep(delay).await;
                        }
                        Err(err) => {
                            break Err(match err {
                                GatewayError::Transport { detail, .. } => {
                                    GatewayError::Transport { detail, attempts }
                                }
                                other => other,
                            })
                        }
                    }
                }
            }
        };

        let entry = AuditEntry {
            model: request.model.clone(),
            temperature: request.temperature,
            request_text: request.full_text(),
            response_text: outcome.as_ref().ok().map(|r| r.content.clone()),
            error: outcome.as_ref().err().map(|e| e.to_string()),
            failed: outcome.is_err(),
            attempts,
            prompt_tokens: outcome.as_ref().ok().and_then(|r| r.prompt_tokens),
            completion_tokens: outcome.as_ref().ok().and_then(|r| r.completion_tokens),
        };
        self.audit.lock().expect("audit lock").push(entry);
        outcome
    }

    fn backoff_delay(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base_ms as f64;
        let exp = base * 2f64.powi(attempt.saturating_sub(1) as i32);
        let capped = exp.min(self.config.backoff_cap_ms as f64);
        // Jitter in [0.5, 1.0) of the capped delay.
        let factor = rand::thread_rng().gen_range(0.5..1.0);
        Duration::from_millis((capped * factor) as u64)
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().expect("audit lock").clone()
    }

    pub fn audit_len(&self) -> usize {
        self.audit.lock().expect("audit lock").len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct FlakyProvider {
        calls: AtomicU32,
        succeed_after: u32,
    }

    #[async_trait]
    impl Provider for FlakyProvider {
        async fn chat(&self, _request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            if n >= self.succeed_after {
                Ok(ChatResponse {
                    content: "ok".into(),
                    prompt_tokens: None,
                    completion_tokens: None,
                })
            } else {
                Err(GatewayError::Transport {
                    detail: "connection refused".into(),
                    attempts: 1,
                })
            }
        }

        fn describe(&self) -> String {
            "flaky".into()
        }
    }

    fn fast_config() -> ProviderConfig {
        let mut config = ProviderConfig::new("http://unreachable.invalid", "test-model");
        config.max_retries = 2;
        config.backoff_base_ms = 1;
        config.backoff_cap_ms = 2;
        config
    }

    fn request() -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::user("hello")], "test-model", 0.0)
    }

    #[tokio::test]
    async fn transport_failure_exhausts_exactly_max_retries_plus_one_attempts() {
        let provider = Arc::new(FlakyProvider {
            calls: AtomicU32::new(0),
            succeed_after: u32::MAX,
        });
        let gateway = Gateway::new(fast_config(), provider.clone()).unwrap();
        let err = gateway.complete(&request()).await.unwrap_err();
        match err {
            GatewayError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected Transport, got {other:?}"),
        }
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
        let log = gateway.audit_log();
        assert_eq!(log.len(), 1);
        assert!(log[0].failed);
        assert_eq!(log[0].attempts, 3);
    }

    #[tokio::test]
    async fn recovers_when_a_retry_succeeds() {
        let provider = Arc::new(FlakyProvider {
            calls: AtomicU32::new(0),
            succeed_after: 2,
        });
        let gateway = Gateway::new(fast_config(), provider).unwrap();
        let response = gateway.complete(&request()).await.unwrap();
        assert_eq!(response.content, "ok");
        let log = gateway.audit_log();
        assert_eq!(log.len(), 1);
        assert!(!log[0].failed);
        assert_eq!(log[0].attempts, 2);
    }

    #[tokio::test]
    async fn auth_errors_are_not_retried() {
        struct AuthFail;
        #[async_trait]
        impl Provider for AuthFail {
            async fn chat(&self, _request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
                Err(GatewayError::Auth("bad key".into()))
            }
            fn describe(&self) -> String {
                "authfail".into()
            }
        }
        let gateway = Gateway::new(fast_config(), Arc::new(AuthFail)).unwrap();
        let err = gateway.complete(&request()).await.unwrap_err();
        assert!(matches!(err, GatewayError::Auth(_)));
        assert_eq!(gateway.audit_log()[0].attempts, 1);
    }

    #[tokio::test]
    async fn invalid_requests_are_rejected_before_transport() {
        let gateway = Gateway::new(
            fast_config(),
            Arc::new(FlakyProvider {
                calls: AtomicU32::new(0),
                succeed_after: 1,
            }),
        )
        .unwrap();

        let empty = ChatRequest::new(vec![], "m", 0.0);
        assert!(matches!(
            gateway.complete(&empty).await,
            Err(GatewayError::InvalidRequest(_))
        ));

        let blank = ChatRequest::new(vec![ChatMessage::user("   ")], "m", 0.0);
        assert!(matches!(
            gateway.complete(&blank).await,
            Err(GatewayError::InvalidRequest(_))
        ));

        let assistant_first =
            ChatRequest::new(vec![ChatMessage::new(Role::Assistant, "hi")], "m", 0.0);
        assert!(matches!(
            gateway.complete(&assistant_first).await,
            Err(GatewayError::InvalidRequest(_))
        ));

        // Rejected invocations still land in the audit log, flagged.
        let log = gateway.audit_log();
        assert_eq!(log.len(), 3);
        assert!(log.iter().all(|e| e.failed && e.attempts == 0));
    }

    #[test]
    fn fingerprint_ignores_the_api_key() {
        let mut a = ProviderConfig::new("http://host/v1", "m1");
        let mut b = a.clone();
        a.api_key = Some("secret-1".into());
        b.api_key = Some("secret-2".into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = ProviderConfig::new("http://host/v1", "m2");
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
