//! Synthetic workloads shared by the benchmarks.

use icdpo_core::lm::ToyNgramLm;
use icdpo_core::retrieval::{Bm25Params, DemoPool};
use icdpo_core::{InputItem, PreferenceRecord};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POLITE: &[&str] = &["please", "thank", "kindly", "glad", "happy", "help"];
pub const RUDE: &[&str] = &["go", "away", "shut", "stupid", "busy", "whatever"];
pub const TOPICS: &[&str] = &[
    "bread", "bike", "cat", "rain", "party", "neighbor", "email", "garden", "train", "coffee",
    "budget", "printer",
];
pub const FILLER: &[&str] = &["you", "it", "the", "a", "my", "and", "is", "to"];

fn words(rng: &mut ChaCha8Rng, main: &[&str], len: usize) -> String {
    (0..len)
        .map(|_| {
            if rng.random_bool(0.6) {
                *main.choose(rng).unwrap()
            } else {
                *FILLER.choose(rng).unwrap()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn prompt(rng: &mut ChaCha8Rng, len: usize) -> String {
    format!("Human: {}?\n\nAssistant:", words(rng, TOPICS, len))
}

/// `n` records with topical prompts, polite chosen and rude rejected responses.
pub fn records(n: usize, seed: u64) -> Vec<PreferenceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let plen = rng.random_range(8..40);
            PreferenceRecord::new(
                format!("r{i}"),
                prompt(&mut rng, plen),
                words(&mut rng, POLITE, 12),
                words(&mut rng, RUDE, 12),
            )
        })
        .collect()
}

pub fn pool(n: usize, seed: u64) -> DemoPool {
    DemoPool::new(records(n, seed), 64, Bm25Params::default())
}

pub fn inputs(k: usize, seed: u64) -> Vec<InputItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|i| InputItem::new(format!("in{i}"), prompt(&mut rng, 20)))
        .collect()
}

/// A bigram model over the benchmark vocabulary.
pub fn model() -> ToyNgramLm {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sentences: Vec<String> = (0..400)
        .map(|i| {
            let main = [POLITE, RUDE, TOPICS][i % 3];
            words(&mut rng, main, 10)
        })
        .collect();
    ToyNgramLm::train(2, sentences.iter().map(String::as_str), 0.5)
        .expect("non-empty corpus")
        .with_icl_weight(1.0)
}
