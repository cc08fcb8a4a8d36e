//! reqwest-backed provider speaking the chat-completions HTTP convention.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, GatewayError, Provider, ProviderConfig};

pub struct HttpProvider {
    client: reqwest::Client,
    completions_url: String,
    api_key: Option<String>,
    endpoint: String,
    model: String,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: Vec<WireMessage<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| GatewayError::Protocol(format!("failed to build HTTP client: {e}")))?;
        let completions_url = format!(
            "{}/chat/completions",
            config.endpoint_url.trim_end_matches('/')
        );
        Ok(Self {
            client,
            completions_url,
            api_key: config.resolved_api_key(),
            endpoint: config.endpoint_url.clone(),
            model: config.model.clone(),
        })
    }
}

#[async_trait]
impl Provider for HttpProvider {
    async fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = WireRequest {
            model: &request.model,
            temperature: request.temperature,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        super::Role::System => "system",
                        super::Role::User => "user",
                        super::Role::Assistant => "assistant",
                    },
                    content: &m.content,
                })
                .collect(),
            max_tokens: request.max_tokens,
        };

        let mut builder = self.client.post(&self.completions_url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }

        let response = builder.send().await.map_err(|e| GatewayError::Transport {
            detail: e.to_string(),
            attempts: 1,
        })?;

        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            let body = response.text().await.unwrap_or_default();
            return Err(GatewayError::Auth(format!("status {status}: {body}")));
        }
        if status.is_server_error()
            || status == reqwest::StatusCode::TOO_MANY_REQUESTS
            || status == reqwest::StatusCode::REQUEST_TIMEOUT
        {
            let body = response.text().await.unwrap_or_default();
            return Err(GatewayError::Transport {
                detail: format!("status {status}: {body}"),
                attempts: 1,
            });
        }
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(GatewayError::Protocol(format!("status {status}: {body}")));
        }

        let parsed: WireResponse = response
            .json()
            .await
            .map_err(|e| GatewayError::Protocol(format!("undecodable body: {e}")))?;

        let content = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| {
                GatewayError::Protocol("response carries no choices[0].message.content".into())
            })?;

        Ok(ChatResponse {
            content,
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }

    fn describe(&self) -> String {
        format!("http:{}:{}", self.endpoint, self.model)
    }
}
