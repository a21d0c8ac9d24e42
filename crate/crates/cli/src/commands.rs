//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use icdpo_core::corpus::{
    filter_by_length, load_preference_records, save_preference_records, whitespace_token_count,
    RecordFormat,
};
use icdpo_core::eval::{
    consistency_report, join_runs_with_gold, load_gold, load_run_records, nll_mean_loss,
};
use icdpo_core::lm::ToyNgramLm;
use icdpo_core::pipeline::read_inputs;
use icdpo_core::prompting::{render_negative_context, render_positive_context, render_zero_shot};
use icdpo_core::retrieval::retrieve_demonstrations;
use icdpo_core::{DemoPool, Demonstration, InputItem, LengthFilter, Pipeline, Style};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;

/// A batch that finished with some inputs failing.
#[derive(Debug)]
pub struct PartialFailure {
    pub failed: usize,
    pub total: usize,
}

impl fmt::Display for PartialFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} inputs failed", self.failed, self.total)
    }
}

impl std::error::Error for PartialFailure {}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Loads a pool, dropping records over the configured token budgets. The
/// BM25 sidecar is used only when nothing was dropped.
pub fn load_pool(path: &Path, cfg: &AppConfig) -> anyhow::Result<DemoPool> {
    let params = cfg.pipeline.retrieval.bm25_params();
    let window_l = cfg.pipeline.retrieval.window_l;
    let records = load_preference_records(path, RecordFormat::Jsonl)?;
    let kept = filter_by_length(&records, &cfg.length_filter, whitespace_token_count);
    if kept.len() == records.len() {
        return Ok(DemoPool::load(path, window_l, params)?);
    }
    info!(
        "pool {}: dropped {} of {} records over the length budget",
        path.display(),
        records.len() - kept.len(),
        records.len()
    );
    Ok(DemoPool::new(kept, window_l, params))
}

fn load_optional_pool(path: Option<&Path>, cfg: &AppConfig) -> anyhow::Result<Option<DemoPool>> {
    path.map(|p| load_pool(p, cfg)).transpose()
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Preset {
    /// 320 prompt / 128 response tokens.
    HhRlhf,
    /// 128 prompt / 200 response tokens.
    SyntheticGpt,
    /// The `[length_filter]` table of the configuration.
    Config,
}

pub fn filter(
    cfg: &AppConfig,
    input: &Path,
    output: &Path,
    preset: Preset,
    dry_run: bool,
) -> anyhow::Result<()> {
    let budget = match preset {
        Preset::HhRlhf => LengthFilter::hh_rlhf(),
        Preset::SyntheticGpt => LengthFilter::synthetic_gpt(),
        Preset::Config => cfg.length_filter.clone(),
    };
    let records = load_preference_records(input, RecordFormat::Jsonl)?;
    let kept = filter_by_length(&records, &budget, whitespace_token_count);
    if !dry_run {
        save_preference_records(output, &kept)?;
    }
    println!(
        "kept {} of {} records (prompt <= {}, response <= {} tokens){}",
        kept.len(),
        records.len(),
        budget.max_prompt_tokens,
        budget.max_response_tokens,
        if dry_run {
            "; dry run, nothing written"
        } else {
            ""
        }
    );
    Ok(())
}

fn inputs_from(
    prompt: Option<String>,
    id: &str,
    inputs: Option<&Path>,
) -> anyhow::Result<Vec<InputItem>> {
    match (prompt, inputs) {
        (Some(p), None) => Ok(vec![InputItem::new(id, p)]),
        (None, Some(path)) => Ok(read_inputs(path)?),
        _ => Err(icdpo_core::Error::InvalidArgument(
            "give exactly one of --prompt or --inputs".into(),
        )
        .into()),
    }
}

#[derive(Serialize)]
struct Scored {
    id: String,
    score: f64,
}

#[derive(Serialize)]
struct RetrievalLine {
    input_id: String,
    demonstrations: Vec<String>,
    coarse: Vec<Scored>,
    fine: Vec<Scored>,
    short_pool: bool,
}

pub fn retrieve(
    cfg: &AppConfig,
    pool: &Path,
    prompt: Option<String>,
    inputs: Option<&Path>,
) -> anyhow::Result<()> {
    let items = inputs_from(prompt, "prompt", inputs)?;
    let pool = load_pool(pool, cfg)?;
    let embedder = cfg.build_embedder();
    let named = |list: &[(usize, f64)]| {
        list.iter()
            .map(|&(doc, score)| Scored {
                id: pool.records()[doc].id.clone(),
                score,
            })
            .collect::<Vec<_>>()
    };
    let mut stdout = std::io::stdout().lock();
    for item in items {
        let r = retrieve_demonstrations(
            &pool,
            embedder.as_ref(),
            &item.prompt,
            &cfg.pipeline.retrieval,
            cfg.pipeline.strict,
        )?;
        let line = RetrievalLine {
            input_id: item.id,
            demonstrations: r.demonstrations.iter().map(|d| d.id.clone()).collect(),
            coarse: named(&r.coarse),
            fine: named(&r.fine),
            short_pool: r.short_pool,
        };
        writeln!(stdout, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

/// A fully specified prompt: style, test dialogue and demonstrations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    pub style: Style,
    pub test_context: String,
    pub demonstrations: Vec<Demonstration>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Side {
    Positive,
    Negative,
    ZeroShot,
}

pub struct RenderArgs<'a> {
    pub fixture: Option<&'a Path>,
    pub pool: Option<&'a Path>,
    pub prompt: Option<String>,
    pub side: Side,
    pub out: Option<&'a Path>,
}

pub fn render(cfg: &AppConfig, args: RenderArgs<'_>) -> anyhow::Result<()> {
    let fixture = match (args.fixture, args.pool, args.prompt) {
        (Some(path), None, None) => {
            let text = std::fs::read_to_string(path).map_err(|e| icdpo_core::Error::io(path, e))?;
            serde_json::from_str::<Fixture>(&text)
                .map_err(|e| icdpo_core::Error::Data(format!("{}: {e}", path.display())))?
        }
        (None, Some(pool), Some(prompt)) => {
            let pool = load_pool(pool, cfg)?;
            let embedder = cfg.build_embedder();
            let r = retrieve_demonstrations(
                &pool,
                embedder.as_ref(),
                &prompt,
                &cfg.pipeline.retrieval,
                cfg.pipeline.strict,
            )?;
            Fixture {
                style: cfg.pipeline.style,
                test_context: prompt,
                demonstrations: r.demonstrations,
            }
        }
        _ => {
            return Err(icdpo_core::Error::InvalidArgument(
                "give either --fixture, or both --pool and --prompt".into(),
            )
            .into())
        }
    };
    let text = match args.side {
        Side::Positive => render_positive_context(
            &fixture.demonstrations,
            &fixture.test_context,
            fixture.style,
        )?,
        Side::Negative => render_negative_context(
            &fixture.demonstrations,
            &fixture.test_context,
            fixture.style,
        )?,
        Side::ZeroShot => render_zero_shot(&fixture.test_context),
    };
    write_text(args.out, &text)
}

pub fn print_plan(command: &str, cfg: &AppConfig, details: &[(&str, String)]) {
    println!("dry run: {command}");
    for (k, v) in details {
        println!("{k}: {v}");
    }
    println!("--- resolved configuration ---");
    print!("{}", cfg.to_toml());
}

pub fn select(
    cfg: &AppConfig,
    prompt: String,
    id: &str,
    pool: Option<&Path>,
    out: Option<&Path>,
    dry_run: bool,
) -> anyhow::Result<()> {
    let pool = load_optional_pool(pool, cfg)?;
    if dry_run {
        print_plan(
            "select",
            cfg,
            &[
                ("input", id.to_owned()),
                (
                    "pool records",
                    pool.as_ref().map_or(0, DemoPool::len).to_string(),
                ),
            ],
        );
        return Ok(());
    }
    let cache = cfg.open_cache()?;
    let backend = cfg.build_backend(cache)?;
    let embedder = cfg.build_embedder();
    let pipe = Pipeline::new(
        backend.as_ref(),
        pool.as_ref(),
        embedder.as_ref(),
        cfg.pipeline.clone(),
    )?;
    let record = pipe.select_best(&InputItem::new(id, prompt))?;
    info!(
        "selected candidate {} with score {:.4} in {:?}",
        record.selected_index, record.selected_score, record.wall_clock
    );
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    write_text(out, &text)
}

pub fn batch(
    cfg: &AppConfig,
    inputs: &Path,
    out: &Path,
    pool: Option<&Path>,
    summary_out: Option<&Path>,
    dry_run: bool,
) -> anyhow::Result<()> {
    let items = read_inputs(inputs)?;
    let pool = load_optional_pool(pool, cfg)?;
    if dry_run {
        print_plan(
            "batch",
            cfg,
            &[
                ("inputs", items.len().to_string()),
                (
                    "pool records",
                    pool.as_ref().map_or(0, DemoPool::len).to_string(),
                ),
                ("output", out.display().to_string()),
            ],
        );
        return Ok(());
    }
    let cache = cfg.open_cache()?;
    let backend = cfg.build_backend(cache.clone())?;
    let embedder = cfg.build_embedder();
    let mut pipe = Pipeline::new(
        backend.as_ref(),
        pool.as_ref(),
        embedder.as_ref(),
        cfg.pipeline.clone(),
    )?;
    if let Some(cache) = cache {
        pipe = pipe.with_cache_stats(cache);
    }
    let mut sink = create(out)?;
    let summary = pipe.run_batch(&items, &mut sink)?;
    sink.flush()
        .with_context(|| format!("cannot write {}", out.display()))?;
    let text = serde_json::to_string_pretty(&summary)?;
    println!("{text}");
    if let Some(path) = summary_out {
        std::fs::write(path, format!("{text}\n"))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    if !summary.failures.is_empty() {
        return Err(PartialFailure {
            failed: summary.failures.len(),
            total: summary.inputs,
        }
        .into());
    }
    Ok(())
}

pub fn eval_mrr(runs: &[PathBuf], gold: &Path, json_out: Option<&Path>) -> anyhow::Result<()> {
    let gold = load_gold(gold)?;
    let mut by_scorer: BTreeMap<String, Vec<icdpo_core::RunRecord>> = BTreeMap::new();
    for path in runs {
        for record in load_run_records(path)? {
            by_scorer
                .entry(record.scorer.as_str().to_owned())
                .or_default()
                .push(record);
        }
    }
    let mut ranked = BTreeMap::new();
    for (scorer, records) in by_scorer {
        ranked.insert(scorer, join_runs_with_gold(&records, &gold)?);
    }
    let report = consistency_report(&ranked)?;
    print!("{}", report.to_table());
    if let Some(path) = json_out {
        std::fs::write(path, report.to_json()?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ResponseSide {
    Chosen,
    Rejected,
}

pub fn analyze_loss(
    cfg: &AppConfig,
    records: &Path,
    side: ResponseSide,
    out: Option<&Path>,
    dry_run: bool,
) -> anyhow::Result<()> {
    let records = load_preference_records(records, RecordFormat::Jsonl)?;
    let pairs: Vec<(String, String)> = records
        .iter()
        .map(|r| {
            let response = match side {
                ResponseSide::Chosen => &r.chosen,
                ResponseSide::Rejected => &r.rejected,
            };
            (render_zero_shot(&r.prompt), response.clone())
        })
        .collect();
    if dry_run {
        print_plan("analyze-loss", cfg, &[("records", pairs.len().to_string())]);
        return Ok(());
    }
    let cache = cfg.open_cache()?;
    let backend = cfg.build_backend(cache)?;
    let report = nll_mean_loss(backend.as_ref(), &pairs)?;
    println!(
        "mean loss {:.6} over {} records",
        report.mean,
        report.per_record.len()
    );
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

pub struct TrainArgs<'a> {
    pub corpus: &'a Path,
    pub out: &'a Path,
    pub order: usize,
    pub alpha: f64,
    pub icl_weight: f64,
}

/// Trains a toy n-gram model from a text file, one sentence per line.
pub fn train_toy(args: TrainArgs<'_>, dry_run: bool) -> anyhow::Result<()> {
    let text =
        std::fs::read_to_string(args.corpus).map_err(|e| icdpo_core::Error::io(args.corpus, e))?;
    let sentences: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if sentences.is_empty() {
        warn!("{} holds no sentences", args.corpus.display());
    }
    let lm = ToyNgramLm::train(args.order, sentences.iter().copied(), args.alpha)?
        .with_icl_weight(args.icl_weight);
    if !dry_run {
        lm.save(args.out)?;
    }
    println!(
        "order {} model over {} sentences, vocabulary {}{}",
        lm.order(),
        sentences.len(),
        lm.vocab().len(),
        if dry_run {
            "; dry run, nothing written"
        } else {
            ""
        }
    );
    Ok(())
}
