//! Best-of-n selection: pick demonstrations, sample candidates from the
//! demonstration-conditioned context, score every candidate and keep the
//! first one with the greatest score.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lm::{CacheStats, CountingBackend, GenerationParams, LmBackend, ScoreCache};
use crate::prompting::{BundleOptions, Demonstration, PromptBundle, Style};
use crate::retrieval::{retrieve_demonstrations, DemoPool, Embedder, RetrievalConfig};
use crate::scoring::{
    argmax_first, contrastive_score_s, contrastive_score_s_hat, naive_loglik, ScoreMode,
    ScoredCandidate, ScorerTag,
};

/// Where demonstrations come from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DemoSelection {
    /// Two-stage retrieval from the pool.
    #[default]
    Retrieve,
    /// `m` pool records drawn with a per-input seed.
    Random,
    /// The listed pool record ids, in order. An empty list means zero-shot.
    Fixed { ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub demos: DemoSelection,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationParams,
    pub scorer: ScorerTag,
    pub style: Style,
    pub score_mode: ScoreMode,
    /// Fail on the first candidate or pool problem instead of degrading.
    pub strict: bool,
    /// Give the zero-shot reference context the instruction header.
    pub zero_shot_header: bool,
    /// Batch items processed concurrently.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            demos: DemoSelection::Retrieve,
            retrieval: RetrievalConfig::default(),
            generation: GenerationParams::default(),
            scorer: ScorerTag::S,
            style: Style::Polite,
            score_mode: ScoreMode::Sum,
            strict: true,
            zero_shot_header: false,
            workers: 4,
        }
    }
}

impl PipelineConfig {
    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = self.retrieval.validate();
        problems.extend(self.generation.validate());
        if self.workers == 0 {
            problems.push("workers must be at least 1".to_owned());
        }
        if let DemoSelection::Fixed { ids } = &self.demos {
            if ids.iter().any(String::is_empty) {
                problems.push("demos.ids must not contain empty ids".to_owned());
            }
        }
        problems
    }

    fn check(&self) -> Result<()> {
        let problems = self.validate();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Reward hook for best-of-n with an arbitrary scalar scorer.
pub trait ExternalScorer: Send + Sync {
    fn score(&self, x: &str, y: &str) -> Result<f64>;
}

impl<F> ExternalScorer for F
where
    F: Fn(&str, &str) -> Result<f64> + Send + Sync,
{
    fn score(&self, x: &str, y: &str) -> Result<f64> {
        self(x, y)
    }
}

/// One prompt to align.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputItem {
    pub id: String,
    pub prompt: String,
}

impl InputItem {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
        }
    }
}

/// Reads `{"id"?, "prompt"}` lines; a missing id becomes the 1-based line number.
pub fn read_inputs(path: &Path) -> Result<Vec<InputItem>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: lineno,
                message: e.to_string(),
            })?;
        let prompt = value
            .get("prompt")
            .and_then(|p| p.as_str())
            .ok_or(Error::MissingField {
                line: lineno,
                field: "prompt",
            })?;
        let id = match value.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => lineno.to_string(),
        };
        out.push(InputItem::new(id, prompt));
    }
    Ok(out)
}

/// Backend calls issued on behalf of one input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub complete: u64,
    pub score: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub index: usize,
    pub text: String,
    pub error: String,
}

/// Everything needed to audit and replay one selection.
///
/// Equality and the serialized form ignore `wall_clock`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub input_id: String,
    pub scorer: ScorerTag,
    /// Demonstration ids in prompt order.
    pub demonstrations: Vec<String>,
    /// Seed handed to the sampler.
    pub sampling_seed: u64,
    /// Successfully scored candidates in sampling order.
    pub candidates: Vec<ScoredCandidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CandidateFailure>,
    /// Sampling index of the selected candidate.
    pub selected_index: usize,
    pub selected_text: String,
    pub selected_score: f64,
    pub calls: CallCounts,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.input_id == other.input_id
            && self.scorer == other.scorer
            && self.demonstrations == other.demonstrations
            && self.sampling_seed == other.sampling_seed
            && self.candidates == other.candidates
            && self.failures == other.failures
            && self.selected_index == other.selected_index
            && self.selected_text == other.selected_text
            && self.selected_score == other.selected_score
            && self.calls == other.calls
    }
}

impl RunRecord {
    pub fn selected(&self) -> &ScoredCandidate {
        self.candidates
            .iter()
            .find(|c| c.index == self.selected_index)
            .expect("selected candidate is recorded")
    }
}

/// A 64-bit seed for one subsystem, derived from the root seed so that
/// adding draws in one subsystem never shifts another's.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub input_id: String,
    pub class: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub inputs: usize,
    pub succeeded: usize,
    pub failures: Vec<BatchFailure>,
    pub mean_selected_score: Option<f64>,
    pub complete_calls: u64,
    pub score_calls: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cache: Option<CacheStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cache_hit_rate: Option<f64>,
}

/// Selection engine over one backend, pool and embedder.
pub struct Pipeline<'a> {
    backend: &'a dyn LmBackend,
    pool: Option<&'a DemoPool>,
    embedder: &'a dyn Embedder,
    cfg: PipelineConfig,
    cache: Option<Arc<ScoreCache>>,
}

enum Scoring<'s> {
    Builtin,
    External(&'s dyn ExternalScorer),
}

impl<'a> Pipeline<'a> {
    pub fn new(
        backend: &'a dyn LmBackend,
        pool: Option<&'a DemoPool>,
        embedder: &'a dyn Embedder,
        cfg: PipelineConfig,
    ) -> Result<Self> {
        cfg.check()?;
        Ok(Self {
            backend,
            pool,
            embedder,
            cfg,
            cache: None,
        })
    }

    /// Reports this cache's hit statistics in batch summaries.
    pub fn with_cache_stats(mut self, cache: Arc<ScoreCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn pool(&self) -> Result<&'a DemoPool> {
        self.pool.ok_or_else(|| {
            Error::Config(vec![
                "a demonstration pool is required for this demos mode".into()
            ])
        })
    }

    /// Demonstrations for `x` in prompt order.
    pub fn demonstrations(&self, input: &InputItem) -> Result<Vec<Demonstration>> {
        let root = self.cfg.generation.seed;
        match &self.cfg.demos {
            DemoSelection::Fixed { ids } if ids.is_empty() => Ok(Vec::new()),
            DemoSelection::Fixed { ids } => self.pool()?.by_ids(ids),
            DemoSelection::Random => {
                let pool = self.pool()?;
                let m = self.cfg.retrieval.m;
                if pool.len() < m {
                    if self.cfg.strict || pool.is_empty() {
                        return Err(Error::PoolTooSmall {
                            available: pool.len(),
                            requested: m,
                        });
                    }
                    log::warn!("pool holds {} records, fewer than m = {m}", pool.len());
                }
                Ok(pool.random(m, derive_seed(root, &format!("demos/{}", input.id))))
            }
            DemoSelection::Retrieve => Ok(retrieve_demonstrations(
                self.pool()?,
                self.embedder,
                &input.prompt,
                &self.cfg.retrieval,
                self.cfg.strict,
            )?
            .demonstrations),
        }
    }

    /// Renders all contexts the configured scorer needs.
    pub fn bundle(&self, input: &InputItem) -> Result<PromptBundle> {
        let demos = self.demonstrations(input)?;
        PromptBundle::build(
            &demos,
            &input.prompt,
            BundleOptions {
                style: self.cfg.style,
                with_negative: self.cfg.scorer == ScorerTag::SHat,
                zero_shot_header: self.cfg.zero_shot_header,
            },
        )
    }

    pub fn select_best(&self, input: &InputItem) -> Result<RunRecord> {
        if self.cfg.scorer == ScorerTag::External {
            return Err(Error::Config(vec![
                "scorer = external needs an external scorer handle".into(),
            ]));
        }
        self.run(input, Scoring::Builtin)
    }

    /// Best-of-n under a caller-supplied scalar reward of `(x, y)`.
    pub fn select_best_external(
        &self,
        input: &InputItem,
        scorer: &dyn ExternalScorer,
    ) -> Result<RunRecord> {
        self.run(input, Scoring::External(scorer))
    }

    fn run(&self, input: &InputItem, scoring: Scoring<'_>) -> Result<RunRecord> {
        let started = Instant::now();
        let tag = match scoring {
            Scoring::Builtin => self.cfg.scorer,
            Scoring::External(_) => ScorerTag::External,
        };
        let root = self.cfg.generation.seed;
        let bundle = PromptBundle::build(
            &self.demonstrations(input)?,
            &input.prompt,
            BundleOptions {
                style: self.cfg.style,
                with_negative: tag == ScorerTag::SHat,
                zero_shot_header: self.cfg.zero_shot_header,
            },
        )?;

        let counting = CountingBackend::new(self.backend);
        let params = GenerationParams {
            seed: derive_seed(root, &format!("generation/{}", input.id)),
            ..self.cfg.generation.clone()
        };
        let texts = counting.complete(&bundle.expert_context, &params)?;
        if texts.is_empty() {
            return Err(Error::Data("backend returned no candidates".into()));
        }

        let outcomes: Vec<Result<ScoredCandidate>> = match (tag, &scoring) {
            (ScorerTag::Random, _) => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(root, &format!("scorer/{}", input.id)));
                texts
                    .iter()
                    .enumerate()
                    .map(|(i, y)| Ok(ScoredCandidate::plain(i, y, rng.random::<f64>(), tag)))
                    .collect()
            }
            (ScorerTag::First, _) => texts
                .iter()
                .enumerate()
                .map(|(i, y)| Ok(ScoredCandidate::plain(i, y, 0.0, tag)))
                .collect(),
            (_, Scoring::External(ext)) => texts
                .par_iter()
                .enumerate()
                .map(|(i, y)| {
                    ext.score(&input.prompt, y)
                        .map(|s| ScoredCandidate::plain(i, y, s, tag))
                })
                .collect(),
            (_, Scoring::Builtin) => {
                let mode = self.cfg.score_mode;
                let backend: &dyn LmBackend = &counting;
                texts
                    .par_iter()
                    .enumerate()
                    .map(|(i, y)| match tag {
                        ScorerTag::S => contrastive_score_s(backend, &bundle, i, y, mode),
                        ScorerTag::SHat => contrastive_score_s_hat(backend, &bundle, i, y, mode),
                        _ => naive_loglik(backend, &bundle, i, y, mode),
                    })
                    .collect()
            }
        };

        let mut candidates = Vec::with_capacity(outcomes.len());
        let mut failures = Vec::new();
        let mut first_error = None;
        for (i, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(c) => candidates.push(c),
                Err(e) => {
                    failures.push(CandidateFailure {
                        index: i,
                        text: texts[i].clone(),
                        error: e.to_string(),
                    });
                    first_error.get_or_insert(e);
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::AllCandidatesFailed(
                failures
                    .iter()
                    .map(|f| format!("candidate {}: {}", f.index, f.error))
                    .collect(),
            ));
        }
        if let Some(e) = first_error {
            if self.cfg.strict {
                return Err(e);
            }
            log::warn!(
                "input {}: {} of {} candidates failed scoring",
                input.id,
                failures.len(),
                texts.len()
            );
        }

        let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
        let best = &candidates[argmax_first(&scores)];
        Ok(RunRecord {
            input_id: input.id.clone(),
            scorer: tag,
            demonstrations: bundle.demo_ids.clone(),
            sampling_seed: params.seed,
            selected_index: best.index,
            selected_text: best.text.clone(),
            selected_score: best.score,
            candidates: candidates.clone(),
            failures,
            calls: CallCounts {
                complete: counting.complete_calls(),
                score: counting.score_calls(),
            },
            wall_clock: started.elapsed(),
        })
    }

    /// Runs every input and streams one JSON line per successful record to
    /// `sink`, in input order.
    pub fn run_batch(&self, inputs: &[InputItem], sink: &mut dyn Write) -> Result<BatchSummary> {
        self.run_batch_with(inputs, sink, |input| self.select_best(input))
    }

    pub fn run_batch_external(
        &self,
        inputs: &[InputItem],
        scorer: &dyn ExternalScorer,
        sink: &mut dyn Write,
    ) -> Result<BatchSummary> {
        self.run_batch_with(inputs, sink, |input| {
            self.select_best_external(input, scorer)
        })
    }

    fn run_batch_with<F>(
        &self,
        inputs: &[InputItem],
        sink: &mut dyn Write,
        select: F,
    ) -> Result<BatchSummary>
    where
        F: Fn(&InputItem) -> Result<RunRecord> + Sync,
    {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("batch has no inputs".into()));
        }
        let cache_before = self.cache.as_ref().map(|c| c.stats());
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;

        let mut summary = BatchSummary {
            inputs: inputs.len(),
            succeeded: 0,
            failures: Vec::new(),
            mean_selected_score: None,
            complete_calls: 0,
            score_calls: 0,
            cache: None,
            cache_hit_rate: None,
        };
        let mut score_total = 0.0;
        let chunk = self.cfg.workers * 4;
        for window in inputs.chunks(chunk) {
            let results: Vec<Result<RunRecord>> =
                threads.install(|| window.par_iter().map(&select).collect());
            for (input, result) in window.iter().zip(results) {
                match result {
                    Ok(record) => {
                        summary.succeeded += 1;
                        summary.complete_calls += record.calls.complete;
                        summary.score_calls += record.calls.score;
                        score_total += record.selected_score;
                        let mut line = serde_json::to_string(&record)?;
                        line.push('\n');
                        sink.write_all(line.as_bytes())
                            .map_err(|e| Error::io("<batch output>", e))?;
                    }
                    Err(e) if self.cfg.strict => return Err(e),
                    Err(e) => {
                        log::warn!("input {}: {e}", input.id);
                        summary.failures.push(BatchFailure {
                            input_id: input.id.clone(),
                            class: e.class().as_str().to_owned(),
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
        sink.flush().map_err(|e| Error::io("<batch output>", e))?;
        if summary.succeeded > 0 {
            summary.mean_selected_score = Some(score_total / summary.succeeded as f64);
        }
        if let (Some(cache), Some(before)) = (&self.cache, cache_before) {
            let delta = cache.stats().since(&before);
            summary.cache_hit_rate = Some(delta.hit_rate());
            summary.cache = Some(delta);
        }
        Ok(summary)
    }
}
