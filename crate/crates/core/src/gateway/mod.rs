//! Chat-completion execution with a content-addressed response cache,
//! retries with backoff, a cap on in-flight requests and a scriptable mock
//! backend.

mod cache;
mod http;
mod mock;

use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompting::PromptBundle;

pub use cache::{CacheEntry, ResponseCache};
pub use http::{HttpBackend, API_KEY_ENV, FALLBACK_API_KEY_ENV};
pub use mock::{CallRecord, Matcher, MockBackend, MockReply, MockRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub endpoint_url: String,
}

fn default_max_tokens() -> u32 {
    512
}

impl GenerationParams {
    pub fn new(model: impl Into<String>, endpoint_url: impl Into<String>) -> Self {
        GenerationParams {
            model: model.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            endpoint_url: endpoint_url.into(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidParams(format!(
                "temperature must be a finite value >= 0 (got {})",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be positive".into()));
        }
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidParams("model name is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub cached: bool,
    pub latency_ms: u64,
    pub request_fingerprint: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("request {fingerprint} failed after {attempts} attempt(s): {message}")]
    Transport {
        fingerprint: String,
        attempts: u32,
        message: String,
    },
    #[error("request {fingerprint} rejected with status {status}: {message}")]
    Request {
        fingerprint: String,
        status: u16,
        message: String,
    },
    #[error("mock backend has no script entry for request {fingerprint}")]
    ScriptedMiss { fingerprint: String },
    #[error("response cache: {0}")]
    Cache(#[source] std::io::Error),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
}

/// Canonical request bytes: model, temperature, max_tokens, then
/// `role\ncontent\n` per message, each field newline-terminated. The
/// temperature uses Rust's shortest round-trip decimal form (`0`, `0.1`).
pub fn canonical_request_bytes(bundle: &PromptBundle, params: &GenerationParams) -> Vec<u8> {
    let mut out = format!("{}\n{}\n{}\n", params.model, params.temperature, params.max_tokens);
    for m in &bundle.messages {
        out.push_str(m.role.as_str());
        out.push('\n');
        out.push_str(&m.content);
        out.push('\n');
    }
    out.into_bytes()
}

/// SHA-256 of [`canonical_request_bytes`] as 64 lowercase hex characters.
pub fn fingerprint(bundle: &PromptBundle, params: &GenerationParams) -> String {
    hex::encode(Sha256::digest(canonical_request_bytes(bundle, params)))
}

/// What a backend sees for one request.
pub struct ChatRequest<'a> {
    pub bundle: &'a PromptBundle,
    pub params: &'a GenerationParams,
    pub fingerprint: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Timeouts, connection failures, 429 and 5xx. Retried.
    Transient(String),
    /// Any other non-success status. Not retried.
    Rejected { status: u16, message: String },
    /// Strict mock without a matching rule.
    ScriptedMiss,
}

pub trait Backend: Send + Sync {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: u32,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            factor: 2,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the full-jitter delay after failed attempt `attempt`
    /// (0-based).
    pub fn delay_cap(&self, attempt: u32) -> Duration {
        let growth = (self.factor as u64).saturating_pow(attempt);
        Duration::from_millis(self.base_delay_ms.saturating_mul(growth).min(self.max_delay_ms))
    }

    fn jittered_delay(&self, attempt: u32) -> Duration {
        let cap = self.delay_cap(attempt).as_millis() as u64;
        if cap == 0 {
            return Duration::ZERO;
        }
        Duration::from_millis(rand::thread_rng().gen_range(0..=cap))
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(slots: usize) -> Self {
        Limiter {
            available: Mutex::new(slots.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *available += 1;
        self.0.freed.notify_one();
    }
}

/// Executes prompt bundles against a backend. Safe to share across
/// threads.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    limiter: Limiter,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Gateway {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(4),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Maximum number of requests in flight at once (minimum 1).
    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.limiter = Limiter::new(limit);
        self
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn complete(&self, bundle: &PromptBundle, params: &GenerationParams) -> Result<Completion, GatewayError> {
        let started = Instant::now();
        let fp = fingerprint(bundle, params);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&fp) {
                return Ok(Completion {
                    text: entry.response,
                    cached: true,
                    latency_ms: started.elapsed().as_millis() as u64,
                    request_fingerprint: fp,
                });
            }
        }

        let request = ChatRequest {
            bundle,
            params,
            fingerprint: &fp,
        };
        let mut attempt = 0;
        let text = loop {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.backend.send(&request)
            };
            attempt += 1;
            match outcome {
                Ok(text) => break text,
                Err(BackendError::Transient(message)) => {
                    if attempt >= self.retry.max_attempts.max(1) {
                        return Err(GatewayError::Transport {
                            fingerprint: fp,
                            attempts: attempt,
                            message,
                        });
                    }
                    let delay = self.retry.jittered_delay(attempt - 1);
                    log::warn!("request {fp} attempt {attempt} failed ({message}); retrying in {delay:?}");
                    thread::sleep(delay);
                }
                Err(BackendError::Rejected { status, message }) => {
                    return Err(GatewayError::Request {
                        fingerprint: fp,
                        status,
                        message,
                    })
                }
                Err(BackendError::ScriptedMiss) => return Err(GatewayError::ScriptedMiss { fingerprint: fp }),
            }
        };

        if let Some(cache) = &self.cache {
            cache
                .put(&fp, &CacheEntry::new(bundle, params, &text))
                .map_err(GatewayError::Cache)?;
        }
        Ok(Completion {
            text,
            cached: false,
            latency_ms: started.elapsed().as_millis() as u64,
            request_fingerprint: fp,
        })
    }
}
