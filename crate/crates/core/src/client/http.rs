//! Chat-completions HTTP backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ClientError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
    /// Environment variable holding the auth token; no header when unset.
    #[serde(default = "default_auth_env")]
    pub auth_env: String,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_scheme")]
    pub auth_scheme: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
}

fn default_max_tokens() -> u32 {
    16
}

fn default_auth_env() -> String {
    "CONSISTFAIR_API_KEY".to_string()
}

fn default_auth_header() -> String {
    "Authorization".to_string()
}

fn default_auth_scheme() -> String {
    "Bearer".to_string()
}

fn default_timeout() -> u64 {
    120
}

fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    n: u32,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    retries: u32,
}

impl HttpBackend {
    pub fn new(config: HttpConfig, retries: u32) -> Result<Self, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(format!("http client: {e}")))?;
        Ok(Self {
            config,
            client,
            retries,
        })
    }

    /// Sends one prompt, retrying transport failures, 429 and 5xx responses.
    pub fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &self.config.system_prompt {
            messages.push(ChatMessage {
                role: "system",
                content: system,
            });
        }
        messages.push(ChatMessage {
            role: "user",
            content: prompt,
        });
        let body = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            n: 1,
        };
        let token = std::env::var(&self.config.auth_env).ok().filter(|t| !t.is_empty());

        let mut last_error = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                let backoff = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let mut request = self.client.post(&self.config.url).json(&body);
            if let Some(token) = &token {
                request = request.header(
                    self.config.auth_header.as_str(),
                    format!("{} {}", self.config.auth_scheme, token).trim().to_string(),
                );
            }
            let response = match request.send() {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            if status.as_u16() == 429 || status.is_server_error() {
                last_error = format!("status {status}");
                continue;
            }
            if !status.is_success() {
                let body = response.text().unwrap_or_default();
                return Err(ClientError::Status {
                    status: status.as_u16(),
                    body,
                });
            }
            let parsed: ChatResponse = response
                .json()
                .map_err(|e| ClientError::Protocol(format!("malformed completion body: {e}")))?;
            return parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| ClientError::Protocol("completion has no message content".into()));
        }
        Err(ClientError::Transport {
            attempts: self.retries + 1,
            message: last_error,
        })
    }
}
