//! Generation backends.
//!
//! [`Generator`] abstracts over the real chat-completion client
//! ([`ChatClient`]) and the seeded categorical mock ([`MockBackend`]).

mod chat;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chat::ChatClient;
pub use mock::{Categorical, MockBackend, MockFailure, MockRule, MockSpec, Outcome};

use crate::http::HttpError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Output is cut right after the first stop sequence; the sequence itself
    /// is kept.
    pub stop: Vec<String>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            max_tokens: 256,
            stop: vec!["[END]".to_string()],
        }
    }
}

pub const MAX_TOKENS_LIMIT: u32 = 32_768;

impl GenParams {
    pub fn validate(&self) -> Result<(), String> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(format!("temperature must be finite and >= 0, got {}", self.temperature));
        }
        if self.max_tokens == 0 || self.max_tokens > MAX_TOKENS_LIMIT {
            return Err(format!("max_tokens must be in 1..={MAX_TOKENS_LIMIT}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("generation timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed backend response: {0}")]
    Decode(String),
}

impl From<HttpError> for GenError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout => GenError::Timeout,
            HttpError::Status { status, body } => GenError::Http { status, body },
            HttpError::Unavailable(m) => GenError::BackendUnavailable(m),
            HttpError::Decode(m) => GenError::Decode(m),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenRequest<'a> {
    pub prompt: &'a str,
    pub params: &'a GenParams,
    /// Identifies this draw for backends that can make it reproducible
    /// independent of call order. Network backends ignore it.
    pub draw: Option<u64>,
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenRequest<'_>) -> Result<String, GenError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, request: &GenRequest<'_>) -> Result<String, GenError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, request: &GenRequest<'_>) -> Result<String, GenError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for std::sync::Arc<G> {
    fn generate(&self, request: &GenRequest<'_>) -> Result<String, GenError> {
        (**self).generate(request)
    }
}

pub fn generate(prompt: &str, params: &GenParams, backend: &dyn Generator) -> Result<String, GenError> {
    backend.generate(&GenRequest {
        prompt,
        params,
        draw: None,
    })
}

/// Runs every request with at most `max_in_flight` concurrent calls. Each
/// result carries the index of its request; the output is sorted by index.
pub fn generate_batch(
    requests: &[GenRequest<'_>],
    backend: &dyn Generator,
    max_in_flight: usize,
) -> Vec<(usize, Result<String, GenError>)> {
    let workers = max_in_flight.max(1).min(requests.len());
    if workers <= 1 {
        return requests
            .iter()
            .enumerate()
            .map(|(i, r)| (i, backend.generate(r)))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(requests.len()));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let r = backend.generate(req);
                results.lock().expect("result lock").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("result lock");
    results.sort_by_key(|(i, _)| *i);
    results
}

/// Keeps `text` up to and including the earliest stop sequence.
pub fn truncate_after_stop(text: &str, stops: &[String]) -> String {
    stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|at| at + s.len()))
        .min()
        .map_or_else(|| text.to_string(), |end| text[..end].to_string())
}

/// Caps concurrent calls into the wrapped backend across all callers.
pub struct ConcurrencyLimit<G> {
    inner: G,
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl<G> ConcurrencyLimit<G> {
    pub fn new(inner: G, max: usize) -> Self {
        Self {
            inner,
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }
}

impl<G: Generator> Generator for ConcurrencyLimit<G> {
    fn generate(&self, request: &GenRequest<'_>) -> Result<String, GenError> {
        {
            let mut active = self.active.lock().expect("limit lock");
            while *active >= self.max {
                active = self.freed.wait(active).expect("limit lock");
            }
            *active += 1;
        }
        let out = self.inner.generate(request);
        *self.active.lock().expect("limit lock") -= 1;
        self.freed.notify_one();
        out
    }
}
