//! The polite/rude bigram scenario.
//!
//! A bigram model is trained on a corpus where rude phrasing is more common
//! than polite phrasing. Pool records pair a polite chosen response with a
//! rude rejected one. Each trial offers three scripted candidates: one
//! polite (demo-consistent) and two rude, in a seeded random order.

use icdpo_core::lm::{Capabilities, GenerationParams, LmBackend, SequenceScore, ToyNgramLm};
use icdpo_core::retrieval::{Bm25Params, DemoPool};
use icdpo_core::{PreferenceRecord, Result};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::BigramOracle;

pub const POLITE: &[&str] = &["please", "thank", "kindly", "glad"];
pub const RUDE: &[&str] = &["go", "away", "shut", "stupid"];
pub const NEUTRAL: &[&str] = &["you", "it", "the"];
pub const TOPICS: &[&str] = &["bread", "bike", "cat", "rain"];

pub const ALPHA: f64 = 0.5;
pub const ICL_WEIGHT: f64 = 2.0;
pub const TRIALS: u64 = 200;

fn sentence(
    rng: &mut ChaCha8Rng,
    main: &[&str],
    p_main: f64,
    len: std::ops::RangeInclusive<usize>,
) -> String {
    let n = rng.random_range(len);
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < p_main {
                *main.choose(rng).unwrap()
            } else {
                *NEUTRAL.choose(rng).unwrap()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn prompt(rng: &mut ChaCha8Rng) -> String {
    format!(
        "Human: my {} and my {} question\n\nAssistant:",
        TOPICS.choose(rng).unwrap(),
        TOPICS.choose(rng).unwrap()
    )
}

/// Training sentences: 60 rude, 30 polite, 30 topical.
pub fn training_corpus() -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
    let mut out = Vec::new();
    for _ in 0..60 {
        out.push(sentence(&mut rng, RUDE, 0.7, 2..=6));
    }
    for _ in 0..30 {
        out.push(sentence(&mut rng, POLITE, 0.7, 2..=6));
    }
    for _ in 0..30 {
        out.push(sentence(&mut rng, TOPICS, 0.5, 2..=6));
    }
    out
}

pub fn model() -> ToyNgramLm {
    ToyNgramLm::train(2, training_corpus().iter().map(String::as_str), ALPHA)
        .unwrap()
        .with_icl_weight(ICL_WEIGHT)
}

pub fn oracle() -> BigramOracle {
    BigramOracle::from_sentences(&training_corpus(), ALPHA, ICL_WEIGHT)
}

pub fn pool_records() -> Vec<PreferenceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(7_777);
    (0..30)
        .map(|i| {
            PreferenceRecord::new(
                format!("p{i}"),
                prompt(&mut rng),
                sentence(&mut rng, POLITE, 0.8, 3..=6),
                sentence(&mut rng, RUDE, 0.8, 3..=6),
            )
        })
        .collect()
}

pub fn pool() -> DemoPool {
    DemoPool::new(pool_records(), 64, Bm25Params::default())
}

pub struct Trial {
    pub prompt: String,
    pub candidates: Vec<String>,
    /// Position of the polite candidate.
    pub target: usize,
    /// Candidate indices best first: the polite one, then the rude ones by
    /// ascending rude-token count (ties by index).
    pub gold: Vec<usize>,
}

pub fn trial(t: u64) -> Trial {
    let mut rng = ChaCha8Rng::seed_from_u64(1_000 + t);
    let prompt = prompt(&mut rng);
    let target = rng.random_range(0..3);
    let candidates: Vec<String> = (0..3)
        .map(|i| {
            if i == target {
                sentence(&mut rng, POLITE, 0.6, 2..=7)
            } else {
                sentence(&mut rng, RUDE, 0.6, 2..=7)
            }
        })
        .collect();
    let rude_count = |s: &str| s.split_whitespace().filter(|w| RUDE.contains(w)).count();
    let mut rest: Vec<usize> = (0..3).filter(|&i| i != target).collect();
    rest.sort_by_key(|&i| (rude_count(&candidates[i]), i));
    let mut gold = vec![target];
    gold.extend(rest);
    Trial {
        prompt,
        candidates,
        target,
        gold,
    }
}

/// Returns fixed candidates from `complete` and delegates `score`.
pub struct Scripted<'a> {
    pub lm: &'a ToyNgramLm,
    pub candidates: Vec<String>,
}

impl LmBackend for Scripted<'_> {
    fn backend_id(&self) -> &str {
        self.lm.backend_id()
    }

    fn capabilities(&self) -> Capabilities {
        self.lm.capabilities()
    }

    fn complete(&self, _context: &str, params: &GenerationParams) -> Result<Vec<String>> {
        assert_eq!(params.n, self.candidates.len());
        Ok(self.candidates.clone())
    }

    fn score(&self, context: &str, completion: &str) -> Result<SequenceScore> {
        self.lm.score(context, completion)
    }
}
