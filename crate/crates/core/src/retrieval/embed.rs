//! Sentence embedders for the fine retrieval stage.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::bm25::tokenize;
use crate::error::{Error, Result};
use crate::http::{HttpSettings, JsonClient};

/// Maps text to a unit-norm vector of fixed dimension.
pub trait Embedder: Send + Sync {
    fn embedder_id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn embedder_id(&self) -> &str {
        (**self).embedder_id()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        (**self).embed(text)
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn embedder_id(&self) -> &str {
        (**self).embedder_id()
    }
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        (**self).embed(text)
    }
}

pub fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
    v
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic signed feature hashing of unigrams and bigrams.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    id: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            id: format!("hash-{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The un-normalized feature vector.
    pub fn raw_vector(&self, text: &str) -> Vec<f64> {
        let toks = tokenize(text);
        let mut v = vec![0.0; self.dim];
        let mut add = |feature: &str, weight: f64| {
            let h = fnv1a(feature.as_bytes());
            let slot = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[slot] += sign * weight;
        };
        for t in &toks {
            add(t, 1.0);
        }
        for w in toks.windows(2) {
            add(&format!("{} {}", w[0], w[1]), 0.5);
        }
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashEmbedder {
    fn embedder_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(l2_normalize(self.raw_vector(text)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    /// Base URL including the API version prefix.
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub timeout_secs: u64,
}

impl RemoteEmbedderConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            max_in_flight: 4,
            max_attempts: 3,
            timeout_secs: 60,
        }
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Client for OpenAI-style `/embeddings` endpoints.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    id: String,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Self {
        let client = JsonClient::new(HttpSettings {
            api_key: config.api_key.clone(),
            max_in_flight: config.max_in_flight,
            max_attempts: config.max_attempts.max(1),
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(config.timeout_secs),
        });
        Self {
            id: format!("remote-embed:{}@{}", config.model, config.base_url),
            config,
            client,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn embedder_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let resp: EmbeddingResponse = self.client.post(
            &url,
            &EmbeddingRequest {
                model: &self.config.model,
                input: text,
            },
        )?;
        let v = resp
            .data
            .into_iter()
            .next()
            .ok_or_else(|| Error::Data("embedding response has no data".into()))?
            .embedding;
        if v.is_empty() {
            return Err(Error::Data("embedding response is empty".into()));
        }
        Ok(l2_normalize(v))
    }
}
