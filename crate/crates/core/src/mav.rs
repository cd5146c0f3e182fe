//! Multi-round accumulative voting.
//!
//! Each round sends every one of the `k` prompts to the backend once,
//! canonicalizes the answers and adds them to a running tally. After a full
//! round, if the leading answer has at least `tau` votes it wins; otherwise
//! another round runs, up to `max_rounds`, after which the plurality leader
//! wins.
//!
//! The loop is expressed as a fold over per-round vote deltas
//! ([`RoundVotes`]), so a recorded stream can be replayed at any lower
//! threshold and yields exactly what a fresh run would have produced.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::combine;
use crate::llm::{generate_batch, GenError, GenParams, GenRequest, Generator};
use crate::model::{
    canonicalize_answer, parse_annotation, AnnotationFormat, AnnotationList, Arity, Quadruplet,
    Triplet, INVALID_KEY,
};
use crate::reformulate::{recover_quadruplets, TrRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VoteUnit {
    /// One vote per generation for the whole canonical answer.
    #[default]
    Answer,
    /// One vote per distinct record inside each valid answer.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MavConfig {
    pub k: usize,
    pub tau: u32,
    /// Defaults to `ceil(4 * tau / k)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u32>,
    pub temperature: f64,
    /// Consecutive backend failures tolerated before a sample is aborted.
    /// Defaults to `3 * k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_budget: Option<u32>,
    pub vote_unit: VoteUnit,
}

impl Default for MavConfig {
    fn default() -> Self {
        Self {
            k: 10,
            tau: 200,
            max_rounds: None,
            temperature: 0.1,
            failure_budget: None,
            vote_unit: VoteUnit::Answer,
        }
    }
}

pub fn default_max_rounds(tau: u32, k: usize) -> u32 {
    let k = k.max(1) as u64;
    (4 * u64::from(tau)).div_ceil(k).max(1) as u32
}

impl MavConfig {
    pub fn with(k: usize, tau: u32) -> Self {
        Self {
            k,
            tau,
            ..Self::default()
        }
    }

    pub fn effective_max_rounds(&self) -> u32 {
        self.max_rounds.unwrap_or_else(|| default_max_rounds(self.tau, self.k))
    }

    pub fn effective_failure_budget(&self) -> u32 {
        self.failure_budget.unwrap_or((3 * self.k).min(u32::MAX as usize) as u32)
    }

    pub fn validate(&self) -> Result<(), MavError> {
        let bad = |m: String| Err(MavError::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        let rounds = self.effective_max_rounds();
        if rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        if u64::from(rounds) * (self.k as u64) < u64::from(self.tau) {
            return bad(format!(
                "max_rounds * k = {} cannot reach tau = {}",
                u64::from(rounds) * self.k as u64,
                self.tau
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad(format!("temperature must be finite and >= 0, got {}", self.temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MavError {
    #[error("invalid voting configuration: {0}")]
    InvalidConfig(String),
    #[error("no prompts to vote over")]
    NoPrompts,
    #[error("no valid answer was produced")]
    NoValidWinner,
    #[error(transparent)]
    Generation(#[from] GenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    MaxRoundsPlurality,
    Aborted,
}

/// Votes gathered in one round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundVotes {
    pub votes: BTreeMap<String, u32>,
    /// Generations that produced a valid answer.
    pub valid: u32,
    /// Generations that failed or did not parse.
    pub discarded: u32,
    /// Backend failure streak at the end of the round exhausted the budget.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyCount {
    pub count: u64,
    /// Round in which the key reached its current count.
    pub last_round: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub counts: BTreeMap<String, KeyCount>,
    pub rounds_run: u32,
    pub discarded: u64,
    /// Generations that produced a valid answer.
    pub valid: u64,
}

impl VoteTally {
    pub fn apply(&mut self, round: &RoundVotes) {
        self.rounds_run += 1;
        self.discarded += u64::from(round.discarded);
        self.valid += u64::from(round.valid);
        for (key, &n) in &round.votes {
            let entry = self.counts.entry(key.clone()).or_insert(KeyCount {
                count: 0,
                last_round: 0,
            });
            entry.count += u64::from(n);
            entry.last_round = self.rounds_run;
        }
    }

    /// Leading key: highest count, then the one that reached it in the
    /// earliest round, then the lexicographically smallest.
    pub fn leader(&self) -> Option<(&str, u64)> {
        self.counts
            .iter()
            .min_by(|(ka, a), (kb, b)| {
                b.count
                    .cmp(&a.count)
                    .then(a.last_round.cmp(&b.last_round))
                    .then(ka.cmp(kb))
            })
            .map(|(k, c)| (k.as_str(), c.count))
    }

    pub fn total_votes(&self) -> u64 {
        self.counts.values().map(|c| c.count).sum()
    }

    /// Descending by count, ties as in [`VoteTally::leader`].
    pub fn top(&self, n: usize) -> Vec<(String, u64)> {
        let mut all: Vec<_> = self.counts.iter().collect();
        all.sort_by(|(ka, a), (kb, b)| {
            b.count
                .cmp(&a.count)
                .then(a.last_round.cmp(&b.last_round))
                .then(ka.cmp(kb))
        });
        all.into_iter().take(n).map(|(k, c)| (k.clone(), c.count)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MavOutcome {
    pub winner: String,
    pub winner_count: u64,
    pub stopped_by: StopReason,
    pub tally: VoteTally,
    pub rounds: Vec<RoundVotes>,
}

fn decide(tally: &VoteTally, tau: u32, max_rounds: u32, round: &RoundVotes) -> Option<StopReason> {
    let lead = tally.leader().map_or(0, |(_, c)| c);
    if lead >= u64::from(tau) {
        Some(StopReason::Threshold)
    } else if round.budget_exhausted {
        Some(StopReason::Aborted)
    } else if tally.rounds_run >= max_rounds {
        Some(StopReason::MaxRoundsPlurality)
    } else {
        None
    }
}

fn finish(tally: VoteTally, rounds: Vec<RoundVotes>, stopped_by: StopReason) -> MavOutcome {
    let (winner, winner_count) = tally
        .leader()
        .map_or((INVALID_KEY.to_string(), 0), |(k, c)| (k.to_string(), c));
    MavOutcome {
        winner,
        winner_count,
        stopped_by,
        tally,
        rounds,
    }
}

/// Replays a recorded vote stream under a (possibly lower) threshold.
/// Returns `None` if the stream ends before any stopping condition holds.
pub fn replay(rounds: &[RoundVotes], tau: u32, max_rounds: u32) -> Option<MavOutcome> {
    let mut tally = VoteTally::default();
    for (i, round) in rounds.iter().enumerate() {
        tally.apply(round);
        if let Some(reason) = decide(&tally, tau, max_rounds, round) {
            return Some(finish(tally, rounds[..=i].to_vec(), reason));
        }
    }
    None
}

/// Like [`replay`], but a stream that ends undecided falls back to the
/// plurality leader over every recorded round.
pub fn replay_to_end(rounds: &[RoundVotes], tau: u32, max_rounds: u32) -> MavOutcome {
    replay(rounds, tau, max_rounds).unwrap_or_else(|| {
        let mut tally = VoteTally::default();
        rounds.iter().for_each(|r| tally.apply(r));
        finish(tally, rounds.to_vec(), StopReason::MaxRoundsPlurality)
    })
}

/// Runs the voting loop for one input against a backend.
pub struct MavEngine<'a> {
    pub config: &'a MavConfig,
    pub params: GenParams,
    pub backend: &'a dyn Generator,
    pub arity: Arity,
    pub format: &'a AnnotationFormat,
    /// Concurrent generations within a round; 1 runs them sequentially.
    pub max_in_flight: usize,
}

impl<'a> MavEngine<'a> {
    pub fn new(
        config: &'a MavConfig,
        backend: &'a dyn Generator,
        arity: Arity,
        format: &'a AnnotationFormat,
    ) -> Self {
        let params = GenParams {
            temperature: config.temperature,
            ..GenParams::default()
        };
        Self {
            config,
            params,
            backend,
            arity,
            format,
            max_in_flight: 1,
        }
    }

    /// `sample_key` distinguishes inputs so that reproducible backends draw
    /// independent streams for each one.
    pub fn run(&self, sample_key: u64, prompts: &[String]) -> Result<MavOutcome, MavError> {
        self.config.validate()?;
        if prompts.is_empty() {
            return Err(MavError::NoPrompts);
        }
        let max_rounds = self.config.effective_max_rounds();
        let budget = self.config.effective_failure_budget();
        let mut tally = VoteTally::default();
        let mut rounds = Vec::new();
        let mut failure_streak = 0u32;

        for round_no in 1..=max_rounds {
            let requests: Vec<GenRequest> = prompts
                .iter()
                .enumerate()
                .map(|(i, p)| GenRequest {
                    prompt: p,
                    params: &self.params,
                    draw: Some(combine(&[sample_key, u64::from(round_no), i as u64])),
                })
                .collect();
            let results = generate_batch(&requests, self.backend, self.max_in_flight);

            let mut round = RoundVotes::default();
            for (_, result) in results {
                match result {
                    Ok(raw) => {
                        failure_streak = 0;
                        let key = canonicalize_answer(&raw, self.arity, self.format);
                        if key == INVALID_KEY {
                            round.discarded += 1;
                            continue;
                        }
                        round.valid += 1;
                        for vote in self.vote_keys(&key) {
                            *round.votes.entry(vote).or_insert(0) += 1;
                        }
                    }
                    Err(e) => {
                        failure_streak += 1;
                        round.discarded += 1;
                        tracing::debug!(round = round_no, error = %e, "generation discarded");
                    }
                }
            }
            round.budget_exhausted = failure_streak >= budget;
            tally.apply(&round);
            debug_assert_eq!(
                tally.valid + tally.discarded,
                u64::from(tally.rounds_run) * prompts.len() as u64
            );
            let stop = decide(&tally, self.config.tau, max_rounds, &round);
            rounds.push(round);
            if let Some(reason) = stop {
                return Ok(finish(tally, rounds, reason));
            }
        }
        unreachable!("the final round always meets the max_rounds condition")
    }

    fn vote_keys(&self, canonical: &str) -> Vec<String> {
        match self.config.vote_unit {
            VoteUnit::Answer => vec![canonical.to_string()],
            VoteUnit::Record => {
                let mut keys: Vec<String> = match self.arity {
                    Arity::Triplet => split_records::<Triplet>(canonical, self.format),
                    Arity::Quadruplet => split_records::<Quadruplet>(canonical, self.format),
                };
                keys.sort();
                keys.dedup();
                keys
            }
        }
    }
}

fn split_records<R: crate::model::Record>(canonical: &str, format: &AnnotationFormat) -> Vec<String> {
    parse_annotation::<R>(canonical, format)
        .map(|l| {
            l.into_items()
                .into_iter()
                .map(|r| AnnotationList::new(vec![r]).expect("one item").serialize(format))
                .collect()
        })
        .unwrap_or_default()
}

/// Decodes a winning answer into quadruplets, recovering hatefulness from the
/// targeted group when the answer holds triplets.
pub fn decode_winner(
    winner: &str,
    arity: Arity,
    rule: &TrRule,
    format: &AnnotationFormat,
) -> Result<AnnotationList<Quadruplet>, MavError> {
    if winner == INVALID_KEY {
        return Err(MavError::NoValidWinner);
    }
    match arity {
        Arity::Triplet => parse_annotation::<Triplet>(winner, format)
            .map(|l| recover_quadruplets(&l, rule))
            .map_err(|_| MavError::NoValidWinner),
        Arity::Quadruplet => parse_annotation(winner, format).map_err(|_| MavError::NoValidWinner),
    }
}

pub fn mav_to_quadruplet(
    outcome: &MavOutcome,
    arity: Arity,
    rule: &TrRule,
    format: &AnnotationFormat,
) -> Result<AnnotationList<Quadruplet>, MavError> {
    decode_winner(&outcome.winner, arity, rule, format)
}

/// Single generation without voting.
pub fn run_single(
    prompt: &str,
    params: &GenParams,
    backend: &dyn Generator,
    arity: Arity,
    rule: &TrRule,
    format: &AnnotationFormat,
) -> Result<AnnotationList<Quadruplet>, MavError> {
    let raw = crate::llm::generate(prompt, params, backend)?;
    let key = canonicalize_answer(&raw, arity, format);
    decode_winner(&key, arity, rule, format)
}
