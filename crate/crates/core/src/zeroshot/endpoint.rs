//! Chat-completion endpoints, retry policy, and the shared rate limiter.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PromptBundle;

pub const API_KEY_ENV: &str = "VAXKIT_LLM_API_KEY";

/// One failed call to a chat endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl EndpointError {
    /// Whether another attempt could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            EndpointError::RateLimited(_)
                | EndpointError::Timeout(_)
                | EndpointError::Server { .. }
                | EndpointError::Transport(_)
        )
    }

    fn from_status(status: u16, body: String) -> Self {
        match status {
            401 | 403 => EndpointError::Auth(format!("HTTP {status}: {body}")),
            429 => EndpointError::RateLimited(body),
            408 | 504 => EndpointError::Timeout(format!("HTTP {status}: {body}")),
            500..=599 => EndpointError::Server { status, message: body },
            _ => EndpointError::Protocol(format!("HTTP {status}: {body}")),
        }
    }
}

/// Anything that answers a rendered prompt with text.
pub trait ChatEndpoint: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, EndpointError>;
}

impl<T: ChatEndpoint + ?Sized> ChatEndpoint for &T {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, EndpointError> {
        (**self).complete(bundle)
    }
}

/// An OpenAI-compatible `POST {base}/chat/completions` service.
#[derive(Debug, Clone)]
pub struct HttpChatEndpoint {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a [String]>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChatEndpoint {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatEndpoint {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent,
        }
    }

    /// Reads the API key from `VAXKIT_LLM_API_KEY`, if set.
    pub fn from_env(base_url: impl Into<String>, timeout: Duration) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(base_url, key, timeout)
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl ChatEndpoint for HttpChatEndpoint {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, EndpointError> {
        let request = ChatRequest {
            model: &bundle.model_name,
            messages: [
                ChatMessage { role: "system", content: &bundle.system_text },
                ChatMessage { role: "user", content: &bundle.user_text },
            ],
            temperature: bundle.params.temperature,
            max_tokens: bundle.params.max_tokens,
            stop: bundle.params.stop.as_deref(),
        };
        let mut call = self.agent.post(self.url());
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send_json(&request).map_err(transport)?;
        let status = response.status().as_u16();
        if status != 200 {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(EndpointError::from_status(status, body));
        }
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| EndpointError::Protocol(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| EndpointError::Protocol("response has no choices".into()))
    }
}

fn transport(e: ureq::Error) -> EndpointError {
    match e {
        ureq::Error::Timeout(_) => EndpointError::Timeout(e.to_string()),
        ureq::Error::StatusCode(code) => EndpointError::from_status(code, String::new()),
        other => EndpointError::Transport(other.to_string()),
    }
}

/// Exponential backoff: attempt `k` (1-based) failing transiently waits
/// `base_delay · 2^(k-1)`, capped at `max_delay`, before attempt `k+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts per prompt, including the first.
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests and stubs.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Spaces out request starts across threads to at most one per interval.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(requests: f64) -> Self {
        let interval = if requests > 0.0 && requests.is_finite() {
            Duration::from_secs_f64(1.0 / requests)
        } else {
            Duration::ZERO
        };
        RateLimiter {
            interval,
            next: Mutex::new(None),
        }
    }

    pub fn unlimited() -> Self {
        Self::per_second(0.0)
    }

    /// Blocks until this caller may start a request.
    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|p| p.into_inner());
            let now = Instant::now();
            let slot = next.map_or(now, |t| t.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}
