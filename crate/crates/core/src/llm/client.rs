use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{mock, CompletionRequest, LlmError};
use crate::domain::{redact, Provider, RuntimeConfig, Secret};

pub const COMPLETION_TIMEOUT: Duration = Duration::from_secs(60);
const OPENAI_DEFAULT_BASE: &str = "https://api.openai.com/v1";
const ANTHROPIC_DEFAULT_BASE: &str = "https://api.anthropic.com/v1";
const ANTHROPIC_VERSION: &str = "2023-06-01";

/// Sends one completion request and returns the assistant text verbatim.
#[async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn complete(&self, req: &CompletionRequest, config: &RuntimeConfig) -> Result<String, LlmError>;
}

/// HTTP client dispatching on [`RuntimeConfig::provider`].
#[derive(Debug, Clone)]
pub struct LlmClient {
    http: reqwest::Client,
}

impl Default for LlmClient {
    fn default() -> Self {
        Self::new(COMPLETION_TIMEOUT)
    }
}

impl LlmClient {
    pub fn new(timeout: Duration) -> Self {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client with static config");
        LlmClient { http }
    }

    async fn post(
        &self,
        url: String,
        body: Value,
        headers: &[(&str, String)],
        key: &Secret,
    ) -> Result<Value, LlmError> {
        let mut builder = self.http.post(&url).json(&body);
        for (name, value) in headers {
            builder = builder.header(*name, value);
        }
        let resp = builder.send().await.map_err(|e| {
            let message = if e.is_timeout() {
                "request timed out".to_string()
            } else {
                e.without_url().to_string()
            };
            LlmError::ProviderError {
                status: None,
                message: redact(&message, [key]),
            }
        })?;

        let status = resp.status();
        let text = resp.text().await.unwrap_or_default();
        if !status.is_success() {
            let message = redact(&provider_message(&text), [key]);
            return Err(if status.as_u16() == 429 || mentions_quota(&text) {
                LlmError::RateLimited { message }
            } else {
                LlmError::ProviderError {
                    status: Some(status.as_u16()),
                    message,
                }
            });
        }
        serde_json::from_str(&text).map_err(|e| LlmError::ProviderError {
            status: Some(status.as_u16()),
            message: format!("response is not JSON: {e}"),
        })
    }

    async fn complete_openai(&self, req: &CompletionRequest, base: &str, key: &Secret) -> Result<String, LlmError> {
        let body = json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let url = format!("{}/chat/completions", base.trim_end_matches('/'));
        let auth = format!("Bearer {}", key.expose());
        let value = self.post(url, body, &[("authorization", auth)], key).await?;

        #[derive(Deserialize)]
        struct Message {
            content: Option<String>,
        }
        #[derive(Deserialize)]
        struct Choice {
            message: Message,
        }
        #[derive(Deserialize)]
        struct Body {
            choices: Vec<Choice>,
        }
        serde_json::from_value::<Body>(value)
            .ok()
            .and_then(|b| b.choices.into_iter().next())
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::ProviderError {
                status: None,
                message: "response has no choices[0].message.content".into(),
            })
    }

    async fn complete_anthropic(&self, req: &CompletionRequest, base: &str, key: &Secret) -> Result<String, LlmError> {
        let body = json!({
            "model": req.model,
            "system": req.system_text,
            "messages": [{"role": "user", "content": req.user_text}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        let url = format!("{}/messages", base.trim_end_matches('/'));
        let headers = [
            ("x-api-key", key.expose().to_string()),
            ("anthropic-version", ANTHROPIC_VERSION.to_string()),
        ];
        let value = self.post(url, body, &headers, key).await?;

        #[derive(Deserialize)]
        struct Part {
            #[serde(rename = "type")]
            kind: String,
            #[serde(default)]
            text: String,
        }
        #[derive(Deserialize)]
        struct Body {
            content: Vec<Part>,
        }
        let body: Body = serde_json::from_value(value).map_err(|_| LlmError::ProviderError {
            status: None,
            message: "response has no content array".into(),
        })?;
        Ok(body
            .content
            .into_iter()
            .filter(|p| p.kind == "text")
            .map(|p| p.text)
            .collect())
    }
}

#[async_trait]
impl CompletionBackend for LlmClient {
    async fn complete(&self, req: &CompletionRequest, config: &RuntimeConfig) -> Result<String, LlmError> {
        if config.model.trim().is_empty() {
            return Err(LlmError::Config("model is not set".into()));
        }
        if config.provider == Provider::Mock {
            return Ok(mock::respond(req));
        }
        let key = config
            .api_key
            .as_ref()
            .filter(|k| !k.expose().is_empty())
            .ok_or_else(|| LlmError::Config(format!("provider {} requires an API key", config.provider)))?;
        let base = config.base_url.as_deref();
        match config.provider {
            Provider::OpenAiCompatible => {
                self.complete_openai(req, base.unwrap_or(OPENAI_DEFAULT_BASE), key)
                    .await
            }
            Provider::Anthropic => {
                self.complete_anthropic(req, base.unwrap_or(ANTHROPIC_DEFAULT_BASE), key)
                    .await
            }
            Provider::Mock => unreachable!(),
        }
    }
}

fn mentions_quota(body: &str) -> bool {
    let lower = body.to_lowercase();
    ["quota", "rate limit", "rate_limit", "ratelimit"]
        .iter()
        .any(|needle| lower.contains(needle))
}

/// Pulls `error.message` (or `message`) out of a provider error body,
/// falling back to a bounded prefix of the raw text.
fn provider_message(body: &str) -> String {
    if let Ok(v) = serde_json::from_str::<Value>(body) {
        let found = v
            .pointer("/error/message")
            .or_else(|| v.get("message"))
            .or_else(|| v.get("error"))
            .and_then(Value::as_str);
        if let Some(m) = found {
            return m.to_string();
        }
    }
    let trimmed: String = body.trim().chars().take(300).collect();
    if trimmed.is_empty() {
        "empty error body".into()
    } else {
        trimmed
    }
}
