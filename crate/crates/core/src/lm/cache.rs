//! Persistent memo table for `score` queries.
//!
//! The on-disk form is an append-only JSONL file. Each line carries the
//! SHA-256 of the query key, the score, and a checksum of the serialized
//! score; lines whose checksum does not match are dropped on load and the
//! query is recomputed on demand.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Capabilities, GenerationParams, LmBackend, SequenceScore};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    check: String,
    score: SequenceScore,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }

    pub fn since(&self, earlier: &CacheStats) -> CacheStats {
        CacheStats {
            hits: self.hits - earlier.hits,
            misses: self.misses - earlier.misses,
        }
    }
}

#[derive(Debug)]
pub struct ScoreCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, SequenceScore>>,
    writer: Mutex<Option<BufWriter<File>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    discarded: usize,
}

pub fn cache_key(backend_id: &str, context: &str, completion: &str) -> String {
    let mut h = Sha256::new();
    for part in [backend_id, context, completion] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

fn checksum(score: &SequenceScore) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(score).expect("score serializes"),
    ))
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            discarded: 0,
        }
    }

    /// Opens (creating if needed) the cache file at `path` and loads every
    /// valid entry.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut discarded = 0;
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) if checksum(&entry.score) == entry.check => {
                        entries.insert(entry.key, entry.score);
                    }
                    Ok(_) => {
                        log::warn!(
                            "{}:{}: checksum mismatch, discarding cached score",
                            path.display(),
                            idx + 1
                        );
                        discarded += 1;
                    }
                    Err(e) => {
                        log::warn!(
                            "{}:{}: unreadable cache line ({e}), discarding",
                            path.display(),
                            idx + 1
                        );
                        discarded += 1;
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: Some(path.to_owned()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(BufWriter::new(file))),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            discarded,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries dropped while loading because they failed validation.
    pub fn discarded(&self) -> usize {
        self.discarded
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn get(&self, key: &str) -> Option<SequenceScore> {
        let found = self.entries.read().expect("cache lock").get(key).cloned();
        if found.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
        found
    }

    pub fn put(&self, key: String, score: SequenceScore) -> Result<()> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(w) = writer.as_mut() {
            let line = CacheLine {
                check: checksum(&score),
                key: key.clone(),
                score: score.clone(),
            };
            let path = self.path.clone().unwrap_or_default();
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        self.entries.write().expect("cache lock").insert(key, score);
        Ok(())
    }
}

/// Backend wrapper that answers repeated `score` queries from a [`ScoreCache`].
pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<ScoreCache>,
}

impl<B: LmBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<ScoreCache>) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &Arc<ScoreCache> {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LmBackend> LmBackend for CachedBackend<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn complete(&self, context: &str, params: &GenerationParams) -> Result<Vec<String>> {
        self.inner.complete(context, params)
    }

    fn score(&self, context: &str, completion: &str) -> Result<SequenceScore> {
        let key = cache_key(self.inner.backend_id(), context, completion);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let score = self.inner.score(context, completion)?;
        self.cache.put(key, score.clone())?;
        Ok(score)
    }
}
