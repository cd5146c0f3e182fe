//! Blocking JSON-over-HTTP with explicit retry and exponential backoff.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HttpError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("could not decode response: {0}")]
    Decode(String),
}

impl HttpError {
    fn is_retryable(&self) -> bool {
        match self {
            HttpError::Timeout | HttpError::Unavailable(_) => true,
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            HttpError::Decode(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 10_000,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    url: String,
    bearer: Option<String>,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, bearer: Option<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            url: url.into(),
            bearer,
            retry,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn post_once<Req: Serialize, Res: DeserializeOwned>(&self, body: &Req) -> Result<Res, HttpError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(HttpError::Status { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| HttpError::Decode(e.to_string()))
    }

    /// POSTs `body` as JSON, retrying transient failures per the policy.
    pub fn post<Req: Serialize, Res: DeserializeOwned>(&self, body: &Req) -> Result<Res, HttpError> {
        let attempts = self.retry.attempts.max(1);
        let mut attempt = 0;
        loop {
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt + 1 < attempts => {
                    let delay = self.retry.backoff(attempt);
                    warn!(url = %self.url, attempt = attempt + 1, error = %e, ?delay, "retrying request");
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn transport_error(e: ureq::Error) -> HttpError {
    match e {
        ureq::Error::Timeout(_) => HttpError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => HttpError::Timeout,
        ureq::Error::StatusCode(status) => HttpError::Status {
            status,
            body: String::new(),
        },
        other => HttpError::Unavailable(other.to_string()),
    }
}

/// Reads an optional bearer token from the named environment variable.
pub fn token_from_env(var: Option<&str>) -> Option<String> {
    var.and_then(|v| std::env::var(v).ok()).filter(|t| !t.is_empty())
}
