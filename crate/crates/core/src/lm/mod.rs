//! Language-model capability contract.
//!
//! Every backend can sample completions for a context and return per-token
//! log-probabilities of a given completion under a context. Two backends
//! ship with the crate: [`ToyNgramLm`], a deterministic in-process n-gram
//! model used as a test oracle, and [`RemoteBackend`], a client for
//! completion servers that support prompt echo with log-probabilities.
//! [`CachedBackend`] memoizes score queries on top of either.

mod cache;
mod remote;
pub mod sampling;
mod toy;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use cache::{CacheStats, CachedBackend, ScoreCache};
pub use remote::{RemoteBackend, RemoteConfig, API_KEY_ENV, BASE_URL_ENV};
pub use toy::{enumerate_distribution, ToyNgramLm, BOS, EOS, MAX_ENUMERATION, UNK};

/// Sampling knobs for the Generation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    /// Number of candidates to sample.
    pub n: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
    /// Take the most probable token at every step instead of sampling.
    pub greedy: bool,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            n: 3,
            top_p: 0.8,
            temperature: 1.0,
            max_tokens: 128,
            seed: 0,
            greedy: false,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("generation.n must be at least 1".to_owned());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            problems.push(format!(
                "generation.top_p must lie in (0, 1], got {}",
                self.top_p
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            problems.push(format!(
                "generation.temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.max_tokens == 0 {
            problems.push("generation.max_tokens must be at least 1".to_owned());
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    /// Natural-log probability.
    pub logprob: f64,
}

/// Log-probability of one completion under one context.
///
/// `sum_logprob` is the log of the sequence probability, i.e. the sum of the
/// per-token conditional log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub token_logprobs: Vec<TokenLogprob>,
    pub sum_logprob: f64,
    pub token_count: usize,
}

impl SequenceScore {
    pub fn empty() -> Self {
        Self {
            token_logprobs: Vec::new(),
            sum_logprob: 0.0,
            token_count: 0,
        }
    }

    pub fn from_tokens(token_logprobs: Vec<TokenLogprob>) -> Self {
        let sum_logprob = token_logprobs.iter().map(|t| t.logprob).sum();
        let token_count = token_logprobs.len();
        Self {
            token_logprobs,
            sum_logprob,
            token_count,
        }
    }

    /// Sum of per-token probabilities (not log-probabilities).
    ///
    /// The literal additive reading of the sequence score; ranks with it
    /// only under `ScoreMode::ProbabilitySum`.
    pub fn probability_sum(&self) -> f64 {
        self.token_logprobs.iter().map(|t| t.logprob.exp()).sum()
    }
}

/// What a backend can and cannot promise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    /// `complete` with a fixed seed returns identical output on every call.
    pub deterministic_sampling: bool,
    /// `score` can return prompt-conditioned token log-probabilities.
    pub prompt_logprobs: bool,
}

pub trait LmBackend: Send + Sync {
    /// Stable identifier, used as part of score-cache keys.
    fn backend_id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Samples `params.n` completions of `context`.
    fn complete(&self, context: &str, params: &GenerationParams) -> Result<Vec<String>>;

    /// Log-probabilities of `completion`'s tokens conditioned on `context` and
    /// on the preceding completion tokens.
    fn score(&self, context: &str, completion: &str) -> Result<SequenceScore>;
}

impl<T: LmBackend + ?Sized> LmBackend for &T {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn complete(&self, context: &str, params: &GenerationParams) -> Result<Vec<String>> {
        (**self).complete(context, params)
    }
    fn score(&self, context: &str, completion: &str) -> Result<SequenceScore> {
        (**self).score(context, completion)
    }
}

impl<T: LmBackend + ?Sized> LmBackend for Arc<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn complete(&self, context: &str, params: &GenerationParams) -> Result<Vec<String>> {
        (**self).complete(context, params)
    }
    fn score(&self, context: &str, completion: &str) -> Result<SequenceScore> {
        (**self).score(context, completion)
    }
}

impl<T: LmBackend + ?Sized> LmBackend for Box<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn complete(&self, context: &str, params: &GenerationParams) -> Result<Vec<String>> {
        (**self).complete(context, params)
    }
    fn score(&self, context: &str, completion: &str) -> Result<SequenceScore> {
        (**self).score(context, completion)
    }
}

/// Wraps a backend and counts the calls that reach it.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    complete_calls: AtomicU64,
    score_calls: AtomicU64,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            complete_calls: AtomicU64::new(0),
            score_calls: AtomicU64::new(0),
        }
    }

    pub fn complete_calls(&self) -> u64 {
        self.complete_calls.load(Ordering::Relaxed)
    }

    pub fn score_calls(&self) -> u64 {
        self.score_calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.complete_calls.store(0, Ordering::Relaxed);
        self.score_calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LmBackend> LmBackend for CountingBackend<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
    fn complete(&self, context: &str, params: &GenerationParams) -> Result<Vec<String>> {
        self.complete_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.complete(context, params)
    }
    fn score(&self, context: &str, completion: &str) -> Result<SequenceScore> {
        self.score_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score(context, completion)
    }
}
