//! Selects the best of three sampled responses with the shipped toy model.
//!
//! Run from the repository root: `cargo run -p icdpo-core --example select`.

use icdpo_core::lm::ToyNgramLm;
use icdpo_core::retrieval::{Bm25Params, HashEmbedder};
use icdpo_core::{DemoPool, InputItem, Pipeline, PipelineConfig, ScorerTag};

fn main() -> icdpo_core::Result<()> {
    let lm = ToyNgramLm::load("fixtures/toy_lm.json".as_ref())?;
    let pool = DemoPool::load("fixtures/pool.jsonl".as_ref(), 64, Bm25Params::default())?;
    let embedder = HashEmbedder::default();
    let cfg = PipelineConfig {
        scorer: ScorerTag::SHat,
        ..Default::default()
    };
    let pipe = Pipeline::new(&lm, Some(&pool), &embedder, cfg)?;
    let record = pipe.select_best(&InputItem::new("q1", "Human: hi\n\nAssistant:"))?;
    for c in &record.candidates {
        println!("{:>8.4}  {}", c.score, c.text);
    }
    println!("selected: {}", record.selected_text);
    Ok(())
}
