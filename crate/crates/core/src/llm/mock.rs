//! Seeded categorical mock backend.
//!
//! Each prompt resolves to a categorical distribution over canned answers (or
//! simulated failures). A draw is a pure function of `(seed, prompt key,
//! draw id)`, so runs are reproducible whatever the call order. Requests
//! without a draw id consume a per-prompt counter instead.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GenError, GenRequest, Generator};
use crate::hash::{combine, fnv1a64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Timeout,
    Unavailable,
    ServerError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcome {
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<MockFailure>,
}

impl Outcome {
    pub fn answer(answer: impl Into<String>, p: f64) -> Self {
        Self {
            p,
            answer: Some(answer.into()),
            error: None,
        }
    }

    pub fn failure(error: MockFailure, p: f64) -> Self {
        Self {
            p,
            answer: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Categorical(pub Vec<Outcome>);

impl Categorical {
    pub fn validate(&self) -> Result<(), String> {
        if self.0.is_empty() {
            return Err("distribution has no outcomes".to_string());
        }
        for o in &self.0 {
            if !(o.p.is_finite() && o.p >= 0.0) {
                return Err(format!("invalid probability {}", o.p));
            }
            if o.answer.is_some() == o.error.is_some() {
                return Err("each outcome needs exactly one of `answer` or `error`".to_string());
            }
        }
        let total: f64 = self.0.iter().map(|o| o.p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("probabilities sum to {total}, expected 1"));
        }
        Ok(())
    }

    /// Inverse-CDF lookup for `u` in [0, 1).
    fn pick(&self, u: f64) -> &Outcome {
        let mut acc = 0.0;
        for o in &self.0 {
            acc += o.p;
            if u < acc {
                return o;
            }
        }
        // Rounding left `u` past the last boundary.
        self.0.iter().rev().find(|o| o.p > 0.0).unwrap_or(&self.0[0])
    }
}

/// Selects a distribution for prompts matching either a prompt key (see
/// [`MockBackend::prompt_key`]) or a substring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub outcomes: Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSpec {
    pub seed: u64,
    pub default: Categorical,
    /// Checked in order; the first match wins.
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl MockSpec {
    pub fn constant(answer: impl Into<String>) -> Self {
        Self {
            seed: 0,
            default: Categorical(vec![Outcome::answer(answer, 1.0)]),
            rules: Vec::new(),
        }
    }

    pub fn categorical(seed: u64, outcomes: &[(&str, f64)]) -> Self {
        Self {
            seed,
            default: Categorical(outcomes.iter().map(|(a, p)| Outcome::answer(*a, *p)).collect()),
            rules: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.default.validate()?;
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.key.is_some() == rule.contains.is_some() {
                return Err(format!("rule {i}: set exactly one of `key` or `contains`"));
            }
            rule.outcomes.validate().map_err(|e| format!("rule {i}: {e}"))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct MockBackend {
    spec: MockSpec,
    counters: Mutex<HashMap<u64, u64>>,
}

impl MockBackend {
    pub fn new(spec: MockSpec) -> Result<Self, String> {
        spec.validate()?;
        Ok(Self {
            spec,
            counters: Mutex::new(HashMap::new()),
        })
    }

    pub fn prompt_key(prompt: &str) -> u64 {
        fnv1a64(prompt.as_bytes())
    }

    pub fn prompt_key_hex(prompt: &str) -> String {
        format!("{:016x}", Self::prompt_key(prompt))
    }

    fn distribution(&self, prompt: &str, key: u64) -> &Categorical {
        let hex = format!("{key:016x}");
        self.spec
            .rules
            .iter()
            .find(|r| match (&r.key, &r.contains) {
                (Some(k), _) => k.eq_ignore_ascii_case(&hex),
                (_, Some(c)) => prompt.contains(c.as_str()),
                _ => false,
            })
            .map_or(&self.spec.default, |r| &r.outcomes)
    }

    fn draw_seed(&self, key: u64, draw: Option<u64>) -> u64 {
        match draw {
            Some(d) => combine(&[self.spec.seed, key, d]),
            None => {
                let mut counters = self.counters.lock().expect("mock counter lock");
                let n = counters.entry(key).or_insert(0);
                let seed = combine(&[self.spec.seed, key, *n, u64::MAX]);
                *n += 1;
                seed
            }
        }
    }
}

impl Generator for MockBackend {
    fn generate(&self, request: &GenRequest<'_>) -> Result<String, GenError> {
        let key = Self::prompt_key(request.prompt);
        let mut rng = ChaCha8Rng::seed_from_u64(self.draw_seed(key, request.draw));
        let u: f64 = rng.random();
        let outcome = self.distribution(request.prompt, key).pick(u);
        match (&outcome.answer, outcome.error) {
            (Some(a), _) => Ok(a.clone()),
            (None, Some(MockFailure::Timeout)) => Err(GenError::Timeout),
            (None, Some(MockFailure::ServerError)) => Err(GenError::Http {
                status: 500,
                body: "mock server error".to_string(),
            }),
            (None, _) => Err(GenError::BackendUnavailable("mock outage".to_string())),
        }
    }
}
