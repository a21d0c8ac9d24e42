//! Two-stage demonstration retrieval.
//!
//! Stage one scores every pool prompt with BM25 over the last `window_l`
//! tokens (query side too) and keeps `pool_k` candidates. Stage two embeds
//! the full query and shortlisted prompts and keeps the `m` most
//! cosine-similar ones.

mod bm25;
mod embed;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bm25::{
    idf, load_or_build_sidecar, sidecar_path, tail_window, tokenize, Bm25Index, Bm25Params,
};
pub use embed::{dot, l2_normalize, Embedder, HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig};

use crate::corpus::{load_preference_records, PreferenceRecord, RecordFormat};
use crate::error::{Error, Result};
use crate::prompting::Demonstration;
use crate::scoring::compare_scores;

/// Order in which retrieved demonstrations are placed in the prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoOrdering {
    /// Most similar demonstration directly before the test prompt.
    #[default]
    MostSimilarLast,
    MostSimilarFirst,
    /// Ascending position in the pool.
    PoolOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub m: usize,
    pub pool_k: usize,
    /// Tail window length in retrieval tokens (not a published setting).
    pub window_l: usize,
    pub k1: f64,
    pub b: f64,
    pub ordering: DemoOrdering,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            m: 2,
            pool_k: 20,
            window_l: 64,
            k1: 1.2,
            b: 0.75,
            ordering: DemoOrdering::MostSimilarLast,
        }
    }
}

impl RetrievalConfig {
    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.k1,
            b: self.b,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.m == 0 {
            problems.push("retrieval.m must be at least 1".to_owned());
        }
        if self.m > self.pool_k {
            problems.push(format!(
                "retrieval.m ({}) must not exceed retrieval.pool_k ({})",
                self.m, self.pool_k
            ));
        }
        if self.window_l == 0 {
            problems.push("retrieval.window_l must be at least 1".to_owned());
        }
        if self.k1.is_nan() || self.k1 <= 0.0 {
            problems.push(format!("retrieval.k1 must be positive, got {}", self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            problems.push(format!("retrieval.b must lie in [0, 1], got {}", self.b));
        }
        problems
    }
}

/// A demonstration pool with its BM25 index over prompt tail windows.
#[derive(Debug, Clone)]
pub struct DemoPool {
    records: Vec<PreferenceRecord>,
    index: Bm25Index,
    window_l: usize,
}

impl DemoPool {
    pub fn new(records: Vec<PreferenceRecord>, window_l: usize, params: Bm25Params) -> Self {
        let index =
            Bm25Index::from_texts(records.iter().map(|r| r.prompt.as_str()), window_l, params);
        Self {
            records,
            index,
            window_l,
        }
    }

    /// Loads a JSONL pool and reuses (or writes) the index sidecar file.
    pub fn load(path: &Path, window_l: usize, params: Bm25Params) -> Result<Self> {
        let records = load_preference_records(path, RecordFormat::Jsonl)?;
        let index = load_or_build_sidecar(path, window_l, params, || {
            Bm25Index::from_texts(records.iter().map(|r| r.prompt.as_str()), window_l, params)
        })?;
        if index.n_docs() != records.len() {
            return Err(Error::Data(format!(
                "index sidecar covers {} documents but the pool has {}",
                index.n_docs(),
                records.len()
            )));
        }
        Ok(Self {
            records,
            index,
            window_l,
        })
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    pub fn window_l(&self) -> usize {
        self.window_l
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn demonstration(&self, doc_id: usize) -> Demonstration {
        Demonstration::from(&self.records[doc_id])
    }

    /// Demonstrations for the given record ids, in the given order.
    pub fn by_ids(&self, ids: &[String]) -> Result<Vec<Demonstration>> {
        ids.iter()
            .map(|id| {
                self.records
                    .iter()
                    .find(|r| &r.id == id)
                    .map(Demonstration::from)
                    .ok_or_else(|| Error::Data(format!("no pool record with id `{id}`")))
            })
            .collect()
    }

    /// `m` distinct records drawn uniformly with a fixed seed, in draw order.
    pub fn random(&self, m: usize, seed: u64) -> Vec<Demonstration> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, self.len(), m.min(self.len()))
            .into_iter()
            .map(|i| self.demonstration(i))
            .collect()
    }
}

/// Top `m` of `shortlist` by cosine similarity to `query_text`; ties keep
/// shortlist order. Returns `(doc_id, cosine)` best-first.
pub fn rerank_embed(
    embedder: &dyn Embedder,
    query_text: &str,
    shortlist: &[(usize, &str)],
    m: usize,
) -> Result<Vec<(usize, f64)>> {
    if shortlist.is_empty() {
        return Err(Error::InvalidArgument("rerank shortlist is empty".into()));
    }
    if m > shortlist.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {m} of a {}-document shortlist",
            shortlist.len()
        )));
    }
    let query = embedder.embed(query_text)?;
    let sims: Vec<f64> = shortlist
        .par_iter()
        .map(|&(doc_id, text)| {
            embedder
                .embed(text)
                .map(|v| dot(&query, &v))
                .map_err(|e| Error::Embedding {
                    doc_id,
                    message: e.to_string(),
                })
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..shortlist.len()).collect();
    order.sort_by(|&a, &b| compare_scores((sims[a], a), (sims[b], b)));
    Ok(order
        .into_iter()
        .take(m)
        .map(|pos| (shortlist[pos].0, sims[pos]))
        .collect())
}

/// Demonstrations for one query with the scores from both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub demonstrations: Vec<Demonstration>,
    /// BM25 shortlist `(doc_id, score)`, best-first.
    pub coarse: Vec<(usize, f64)>,
    /// Embedding rerank `(doc_id, cosine)`, best-first.
    pub fine: Vec<(usize, f64)>,
    /// Set when the pool held fewer than `m` records.
    pub short_pool: bool,
}

pub fn retrieve_demonstrations(
    pool: &DemoPool,
    embedder: &dyn Embedder,
    x: &str,
    cfg: &RetrievalConfig,
    strict: bool,
) -> Result<Retrieval> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument("demonstration pool is empty".into()));
    }
    if cfg.window_l != pool.window_l() {
        return Err(Error::InvalidArgument(format!(
            "pool was indexed with window_l = {} but retrieval uses {}",
            pool.window_l(),
            cfg.window_l
        )));
    }
    let short_pool = pool.len() < cfg.m;
    if short_pool && strict {
        return Err(Error::PoolTooSmall {
            available: pool.len(),
            requested: cfg.m,
        });
    }
    let m = cfg.m.min(pool.len());

    let query = tokenize(x);
    let query = tail_window(&query, cfg.window_l);
    let coarse = pool.index().top_k(query, cfg.pool_k.max(m));

    let shortlist: Vec<(usize, &str)> = coarse
        .iter()
        .map(|&(doc, _)| (doc, pool.records()[doc].prompt.as_str()))
        .collect();
    let fine = rerank_embed(embedder, x, &shortlist, m)?;

    let mut chosen: Vec<usize> = fine.iter().map(|&(doc, _)| doc).collect();
    match cfg.ordering {
        DemoOrdering::MostSimilarFirst => {}
        DemoOrdering::MostSimilarLast => chosen.reverse(),
        DemoOrdering::PoolOrder => chosen.sort_unstable(),
    }
    if short_pool {
        log::warn!(
            "pool holds {} records, fewer than the {} requested demonstrations",
            pool.len(),
            cfg.m
        );
    }
    Ok(Retrieval {
        demonstrations: chosen.into_iter().map(|d| pool.demonstration(d)).collect(),
        coarse,
        fine,
        short_pool,
    })
}
