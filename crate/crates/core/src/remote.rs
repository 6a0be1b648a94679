//! Blocking JSON-over-HTTP client shared by the chat and embedding services.
//!
//! Transient failures (timeouts, connection errors, 429, 5xx) are retried
//! with exponential backoff; authentication failures are not.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RemoteError {
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no endpoint configured")]
    NotConfigured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`, capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

enum Failure {
    Transient(RemoteError, bool),
    Fatal(RemoteError),
}

fn classify(err: ureq::Error) -> Failure {
    match err {
        ureq::Error::StatusCode(code @ (401 | 403)) => Failure::Fatal(RemoteError::Auth(code)),
        ureq::Error::StatusCode(429) => Failure::Transient(RemoteError::Network("HTTP 429".into()), true),
        ureq::Error::StatusCode(code) if code >= 500 => {
            Failure::Transient(RemoteError::Network(format!("HTTP {code}")), false)
        }
        ureq::Error::StatusCode(code) => Failure::Fatal(RemoteError::Network(format!("HTTP {code}"))),
        ureq::Error::Json(e) => Failure::Fatal(RemoteError::Malformed(e.to_string())),
        e @ (ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::BodyStalled) => Failure::Transient(RemoteError::Network(e.to_string()), false),
        e => Failure::Fatal(RemoteError::Network(e.to_string())),
    }
}

/// POSTs JSON bodies to one endpoint with bearer-token auth and retries.
pub struct JsonClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    requests: AtomicUsize,
}

impl JsonClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(retry.timeout_ms)))
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            api_key,
            retry,
            requests: AtomicUsize::new(0),
        }
    }

    /// Reads the credential from `env_var`; an unset variable means no auth header.
    pub fn from_env(endpoint: impl Into<String>, env_var: &str, retry: RetryPolicy) -> Self {
        let key = std::env::var(env_var).ok();
        if key.is_none() {
            log::warn!("{env_var} is not set; requests are sent without an Authorization header");
        }
        Self::new(endpoint, key, retry)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Total HTTP requests issued, retries included.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn post(&self, body: &Value) -> Result<Value, RemoteError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = RemoteError::Network("no attempt made".into());
        for attempt in 1..=attempts {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let mut req = self.agent.post(&self.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let outcome = req
                .send_json(body)
                .and_then(|mut resp| resp.body_mut().read_json::<Value>());
            match outcome {
                Ok(v) => {
                    if attempt > 1 {
                        log::info!("{} succeeded on attempt {attempt}", self.endpoint);
                    }
                    return Ok(v);
                }
                Err(e) => match classify(e) {
                    Failure::Fatal(err) => return Err(err),
                    Failure::Transient(err, rate_limited) => {
                        log::warn!("{} attempt {attempt}/{attempts} failed: {err}", self.endpoint);
                        last = if rate_limited {
                            RemoteError::RateLimited { attempts: attempt }
                        } else {
                            err
                        };
                        if attempt < attempts {
                            std::thread::sleep(self.retry.delay(attempt));
                        }
                    }
                },
            }
        }
        Err(last)
    }
}
