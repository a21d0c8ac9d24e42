//! Contrastive candidate scores.
//!
//! * `S(y)  = log pi(y | [d+; x]) - log pi(y | x)`
//! * `Ŝ(y)  = log pi(y | [d+; x]) - log pi(y | [d-; x])`
//!
//! `S` is the log-ratio reward of the in-context policy against the bare
//! policy with the prompt-only normalizer dropped; since that term does not
//! depend on `y`, it never changes which candidate wins.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LmBackend, SequenceScore};
use crate::prompting::PromptBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerTag {
    S,
    SHat,
    External,
    NaiveLoglik,
    Random,
    First,
}

impl ScorerTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerTag::S => "s",
            ScorerTag::SHat => "s_hat",
            ScorerTag::External => "external",
            ScorerTag::NaiveLoglik => "naive_loglik",
            ScorerTag::Random => "random",
            ScorerTag::First => "first",
        }
    }

    pub const ALL: [ScorerTag; 6] = [
        ScorerTag::S,
        ScorerTag::SHat,
        ScorerTag::External,
        ScorerTag::NaiveLoglik,
        ScorerTag::Random,
        ScorerTag::First,
    ];
}

impl std::fmt::Display for ScorerTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScorerTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScorerTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown scorer `{s}` (expected s, s_hat, external, naive_loglik, random or first)"
                ))
            })
    }
}

/// How a sequence log-probability enters a score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Sum of token log-probabilities.
    #[default]
    Sum,
    /// Mean token log-probability (log of the geometric-mean probability).
    Normalized,
    /// Log of the sum of per-token probabilities, the literal additive
    /// reading of the sequence score. For comparison runs only.
    ProbabilitySum,
}

impl ScoreMode {
    pub fn apply(self, seq: &SequenceScore) -> Result<f64> {
        match self {
            ScoreMode::Sum => Ok(seq.sum_logprob),
            ScoreMode::Normalized => normalized_policy_score(seq),
            ScoreMode::ProbabilitySum => {
                if seq.token_count == 0 {
                    return Err(Error::EmptySequence);
                }
                Ok(seq.probability_sum().ln())
            }
        }
    }
}

/// One sampled response and everything that went into its score.
///
/// The `logp_*` fields hold the values as they entered the score, i.e.
/// per-token means when the score is length-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub index: usize,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub logp_expert: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub logp_reference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub logp_negative: Option<f64>,
    pub score: f64,
    pub scorer_tag: ScorerTag,
    /// 1-based position after ranking.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank: Option<usize>,
}

impl ScoredCandidate {
    pub fn plain(index: usize, text: impl Into<String>, score: f64, tag: ScorerTag) -> Self {
        Self {
            index,
            text: text.into(),
            logp_expert: None,
            logp_reference: None,
            logp_negative: None,
            score,
            scorer_tag: tag,
            rank: None,
        }
    }
}

/// `mode(a) - mode(b)`. When both scores cover the same tokens the
/// difference is taken token by token, so tokens whose conditional is the
/// same in both contexts contribute exactly zero.
pub fn log_ratio(a: &SequenceScore, b: &SequenceScore, mode: ScoreMode) -> Result<f64> {
    let aligned = !a.token_logprobs.is_empty()
        && a.token_logprobs.len() == b.token_logprobs.len()
        && a.token_logprobs
            .iter()
            .zip(&b.token_logprobs)
            .all(|(x, y)| x.token == y.token);
    let per_token = || -> f64 {
        a.token_logprobs
            .iter()
            .zip(&b.token_logprobs)
            .map(|(x, y)| x.logprob - y.logprob)
            .sum()
    };
    match mode {
        ScoreMode::Sum if aligned => Ok(per_token()),
        ScoreMode::Normalized if aligned => Ok(per_token() / a.token_logprobs.len() as f64),
        _ => Ok(mode.apply(a)? - mode.apply(b)?),
    }
}

pub fn contrastive_score_s(
    backend: &dyn LmBackend,
    bundle: &PromptBundle,
    index: usize,
    y: &str,
    mode: ScoreMode,
) -> Result<ScoredCandidate> {
    let expert = backend.score(&bundle.expert_context, y)?;
    let reference = backend.score(&bundle.zero_shot_context, y)?;
    Ok(ScoredCandidate {
        logp_expert: Some(mode.apply(&expert)?),
        logp_reference: Some(mode.apply(&reference)?),
        score: log_ratio(&expert, &reference, mode)?,
        ..ScoredCandidate::plain(index, y, 0.0, ScorerTag::S)
    })
}

pub fn contrastive_score_s_hat(
    backend: &dyn LmBackend,
    bundle: &PromptBundle,
    index: usize,
    y: &str,
    mode: ScoreMode,
) -> Result<ScoredCandidate> {
    let negative_context = bundle.negative_context.as_deref().ok_or_else(|| {
        Error::InvalidArgument("promoted score needs a negative context in the bundle".into())
    })?;
    let expert = backend.score(&bundle.expert_context, y)?;
    let negative = backend.score(negative_context, y)?;
    Ok(ScoredCandidate {
        logp_expert: Some(mode.apply(&expert)?),
        logp_negative: Some(mode.apply(&negative)?),
        score: log_ratio(&expert, &negative, mode)?,
        ..ScoredCandidate::plain(index, y, 0.0, ScorerTag::SHat)
    })
}

/// Plain in-context likelihood `log pi(y | [d+; x])`.
pub fn naive_loglik(
    backend: &dyn LmBackend,
    bundle: &PromptBundle,
    index: usize,
    y: &str,
    mode: ScoreMode,
) -> Result<ScoredCandidate> {
    let expert = mode.apply(&backend.score(&bundle.expert_context, y)?)?;
    Ok(ScoredCandidate {
        logp_expert: Some(expert),
        ..ScoredCandidate::plain(index, y, expert, ScorerTag::NaiveLoglik)
    })
}

/// Mean token log-probability of a non-empty sequence.
pub fn normalized_policy_score(seq: &SequenceScore) -> Result<f64> {
    if seq.token_count == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(seq.sum_logprob / seq.token_count as f64)
}

/// Descending by score, NaN last; equal scores keep ascending index order.
pub fn compare_scores(a: (f64, usize), b: (f64, usize)) -> Ordering {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    key(b.0)
        .partial_cmp(&key(a.0))
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Candidate positions ordered best-first under [`compare_scores`].
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| compare_scores((scores[a], a), (scores[b], b)));
    order
}

/// Index of the first strictly greatest score; 0 when nothing beats `-inf`.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    best
}

/// Sorts candidates best-first and fills in their 1-based `rank`.
pub fn rank_candidates(cands: &[ScoredCandidate]) -> Result<Vec<ScoredCandidate>> {
    if let Some(first) = cands.first() {
        if cands.iter().any(|c| c.scorer_tag != first.scorer_tag) {
            return Err(Error::MixedScorerTags);
        }
    }
    let mut out = cands.to_vec();
    out.sort_by(|a, b| compare_scores((a.score, a.index), (b.score, b.index)));
    for (pos, c) in out.iter_mut().enumerate() {
        c.rank = Some(pos + 1);
    }
    Ok(out)
}
