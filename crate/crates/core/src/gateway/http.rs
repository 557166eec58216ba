use std::env;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, ChatRequest};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "PAVI_API_KEY";
/// Consulted when [`API_KEY_ENV`] is unset.
pub const FALLBACK_API_KEY_ENV: &str = "OPENAI_API_KEY";

/// OpenAI-compatible chat-completions client:
/// `POST {endpoint_url}/chat/completions`.
pub struct HttpBackend {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(timeout: Duration) -> Self {
        let api_key = env::var(API_KEY_ENV)
            .or_else(|_| env::var(FALLBACK_API_KEY_ENV))
            .ok()
            .filter(|k| !k.is_empty());
        Self::with_api_key(timeout, api_key)
    }

    pub fn with_api_key(timeout: Duration, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { agent, api_key }
    }
}

impl Default for HttpBackend {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

pub(crate) fn request_body(request: &ChatRequest<'_>) -> Value {
    let messages: Vec<Value> = request
        .bundle
        .messages
        .iter()
        .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
        .collect();
    json!({
        "model": request.params.model,
        "temperature": request.params.temperature,
        "max_tokens": request.params.max_tokens,
        "messages": messages,
    })
}

fn server_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .or_else(|| v.get("error"))
                .or_else(|| v.get("message"))
                .and_then(|m| m.as_str().map(str::to_string))
        })
        .unwrap_or_else(|| body.trim().chars().take(500).collect())
}

fn completion_text(body: &str) -> Option<String> {
    let value: Value = serde_json::from_str(body).ok()?;
    let content = value.pointer("/choices/0/message/content")?;
    match content {
        Value::Null => Some(String::new()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

impl Backend for HttpBackend {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let url = format!(
            "{}/chat/completions",
            request.params.endpoint_url.trim_end_matches('/')
        );
        let mut call = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send(request_body(request).to_string())
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200..=299 => completion_text(&body).ok_or_else(|| BackendError::Rejected {
                status,
                message: format!("response has no choices[0].message.content: {}", server_message(&body)),
            }),
            429 | 500..=599 => Err(BackendError::Transient(format!("HTTP {status}: {}", server_message(&body)))),
            _ => Err(BackendError::Rejected {
                status,
                message: server_message(&body),
            }),
        }
    }
}
