//! Okapi BM25 over tail windows of pool prompts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scoring::compare_scores;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// The last `l` items of `tokens`.
pub fn tail_window<T>(tokens: &[T], l: usize) -> &[T] {
    &tokens[tokens.len().saturating_sub(l)..]
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, positive for every `0 <= df <= N`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    documents: Vec<Vec<String>>,
    /// term -> postings of (doc id, term frequency), ascending doc id.
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    average_doc_length: f64,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn build(documents: Vec<Vec<String>>, params: Bm25Params) -> Self {
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        for (doc_id, doc) in documents.iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in doc {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings
                    .entry(term.to_owned())
                    .or_default()
                    .push((doc_id, count));
            }
        }
        let total: usize = documents.iter().map(Vec::len).sum();
        let average_doc_length = if documents.is_empty() {
            0.0
        } else {
            total as f64 / documents.len() as f64
        };
        Self {
            documents,
            postings,
            average_doc_length,
            params,
        }
    }

    /// Index over the last `window_l` retrieval tokens of each text.
    pub fn from_texts<'a, I>(texts: I, window_l: usize, params: Bm25Params) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let docs = texts
            .into_iter()
            .map(|t| tail_window(&tokenize(t), window_l).to_vec())
            .collect();
        Self::build(docs, params)
    }

    pub fn n_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn average_doc_length(&self) -> f64 {
        self.average_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn document(&self, doc_id: usize) -> &[String] {
        &self.documents[doc_id]
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn term_weight(&self, tf: f64, doc_len: f64) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let norm = if self.average_doc_length > 0.0 {
            doc_len / self.average_doc_length
        } else {
            0.0
        };
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    /// BM25 of one document. Repeated query terms contribute once per occurrence.
    pub fn score(&self, query: &[String], doc_id: usize) -> f64 {
        let n = self.n_docs();
        let doc_len = self.documents[doc_id].len() as f64;
        query
            .iter()
            .map(|term| {
                let Some(posting) = self.postings.get(term) else {
                    return 0.0;
                };
                match posting.binary_search_by_key(&doc_id, |&(d, _)| d) {
                    Ok(pos) => {
                        idf(n, posting.len()) * self.term_weight(posting[pos].1 as f64, doc_len)
                    }
                    Err(_) => 0.0,
                }
            })
            .sum()
    }

    /// Every document's score, accumulated through the postings lists.
    pub fn score_all(&self, query: &[String]) -> Vec<f64> {
        let n = self.n_docs();
        let mut scores = vec![0.0; n];
        for term in query {
            if let Some(posting) = self.postings.get(term) {
                let w = idf(n, posting.len());
                for &(doc, tf) in posting {
                    scores[doc] +=
                        w * self.term_weight(tf as f64, self.documents[doc].len() as f64);
                }
            }
        }
        scores
    }

    /// Best `k` documents, descending score, ties by ascending doc id.
    pub fn top_k(&self, query: &[String], k: usize) -> Vec<(usize, f64)> {
        let scores = self.score_all(query);
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| compare_scores((a.1, a.0), (b.1, b.0)));
        ranked.truncate(k);
        ranked
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    pool_sha256: String,
    window_l: usize,
    index: Bm25Index,
}

pub fn sidecar_path(pool_path: &Path) -> PathBuf {
    let mut name = pool_path.as_os_str().to_owned();
    name.push(".bm25.json");
    PathBuf::from(name)
}

/// Loads the persisted index next to `pool_path` when it was built from the
/// same file contents and settings; otherwise builds it with `build` and
/// writes the sidecar.
pub fn load_or_build_sidecar<F>(
    pool_path: &Path,
    window_l: usize,
    params: Bm25Params,
    build: F,
) -> Result<Bm25Index>
where
    F: FnOnce() -> Bm25Index,
{
    let bytes = std::fs::read(pool_path).map_err(|e| Error::io(pool_path, e))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let side = sidecar_path(pool_path);
    if let Ok(text) = std::fs::read_to_string(&side) {
        match serde_json::from_str::<Sidecar>(&text) {
            Ok(s)
                if s.pool_sha256 == digest
                    && s.window_l == window_l
                    && s.index.params == params =>
            {
                return Ok(s.index);
            }
            Ok(_) => log::info!("{}: stale index, rebuilding", side.display()),
            Err(e) => log::warn!("{}: unreadable index ({e}), rebuilding", side.display()),
        }
    }
    let index = build();
    let sidecar = Sidecar {
        pool_sha256: digest,
        window_l,
        index,
    };
    // Write then rename so concurrent readers never see a partial file.
    let tmp = side.with_extension(format!("tmp{}", std::process::id()));
    let written = std::fs::write(&tmp, serde_json::to_vec(&sidecar)?)
        .and_then(|()| std::fs::rename(&tmp, &side));
    if let Err(e) = written {
        let _ = std::fs::remove_file(&tmp);
        log::warn!("{}: cannot save index: {e}", side.display());
    }
    Ok(sidecar.index)
}
