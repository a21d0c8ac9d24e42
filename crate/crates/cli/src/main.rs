//! `icdpo`: best-of-n response selection with in-context contrastive scores.
//!
//! Exit codes: 0 success, 2 configuration, 3 backend capability or
//! transport, 4 data, 5 batch finished with failed inputs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use icdpo_core::{ErrorClass, ScorerTag, Style};

use commands::{PartialFailure, Preset, RenderArgs, ResponseSide, Side, TrainArgs};
use config::{AppConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "icdpo",
    version,
    about = "Rerank sampled responses with in-context contrastive scores"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Batch items processed concurrently.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Use a remote completion endpoint (base URL including `/v1`).
    #[arg(long, global = true)]
    backend_url: Option<String>,
    /// Remote model name, or toy model path for the toy backend.
    #[arg(long, global = true)]
    model: Option<String>,
    /// off, error, warn, info, debug or trace; `RUST_LOG` takes precedence.
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Ignore the configured score cache.
    #[arg(long, global = true)]
    no_cache: bool,
    /// Validate and print the plan without calling a backend or writing outputs.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Args)]
struct ScoringArgs {
    /// s, s_hat, naive_loglik, random, first.
    #[arg(long, value_parser = ScorerTag::from_str)]
    scorer: Option<ScorerTag>,
    /// polite, harmless, helpful, honest.
    #[arg(long, value_parser = Style::from_str)]
    style: Option<Style>,
}

#[derive(Subcommand)]
enum Command {
    /// Drop preference records over a token budget.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "config")]
        preset: Preset,
    },
    /// Show the demonstrations retrieved for prompts.
    Retrieve {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        prompt: Option<String>,
        /// JSONL of `{"id", "prompt"}`.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Print a scoring context.
    Render {
        /// JSON with `style`, `test_context` and `demonstrations`.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long, value_enum, default_value = "positive")]
        side: Side,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample candidates for one prompt and select the best.
    Select {
        /// The test dialogue.
        #[arg(long, alias = "input")]
        prompt: String,
        #[arg(long, default_value = "prompt")]
        id: String,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Run selection over a JSONL file of prompts.
    Batch {
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Also write the summary JSON here.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Mean reciprocal rank of run records against gold rankings.
    EvalMrr {
        /// Run-record JSONL files; records are grouped by scorer.
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Mean per-token negative log-likelihood of responses.
    AnalyzeLoss {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value = "chosen")]
        side: ResponseSide,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a toy n-gram model from a text file, one sentence per line.
    TrainToy {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        icl_weight: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Filter { .. } => "filter",
            Command::Retrieve { .. } => "retrieve",
            Command::Render { .. } => "render",
            Command::Select { .. } => "select",
            Command::Batch { .. } => "batch",
            Command::EvalMrr { .. } => "eval-mrr",
            Command::AnalyzeLoss { .. } => "analyze-loss",
            Command::TrainToy { .. } => "train-toy",
        }
    }
}

fn resolve_config(g: &GlobalArgs, scoring: Option<&ScoringArgs>) -> icdpo_core::Result<AppConfig> {
    let mut cfg = match &g.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(s) = scoring {
        if let Some(tag) = s.scorer {
            cfg.pipeline.scorer = tag;
        }
        if let Some(style) = s.style {
            cfg.pipeline.style = style;
        }
    }
    cfg.apply(&Overrides {
        seed: g.seed,
        workers: g.workers,
        backend_url: g.backend_url.clone(),
        model: g.model.clone(),
        log_level: g.log_level.clone(),
        no_cache: g.no_cache,
    })?;
    Ok(cfg)
}

fn init_logging(level: &str) {
    let level = log::LevelFilter::from_str(level).unwrap_or(log::LevelFilter::Info);
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    let scoring = match &cli.command {
        Command::Select { scoring, .. } | Command::Batch { scoring, .. } => Some(scoring),
        _ => None,
    };
    let cfg = resolve_config(g, scoring)?;
    init_logging(&cfg.log_level);
    match cli.command {
        Command::Filter {
            input,
            output,
            preset,
        } => commands::filter(&cfg, &input, &output, preset, g.dry_run),
        Command::Retrieve { .. } | Command::Render { .. } | Command::EvalMrr { .. }
            if g.dry_run =>
        {
            commands::print_plan(cli.command.name(), &cfg, &[]);
            Ok(())
        }
        Command::Retrieve {
            pool,
            prompt,
            inputs,
        } => commands::retrieve(&cfg, &pool, prompt, inputs.as_deref()),
        Command::Render {
            fixture,
            pool,
            prompt,
            side,
            out,
        } => commands::render(
            &cfg,
            RenderArgs {
                fixture: fixture.as_deref(),
                pool: pool.as_deref(),
                prompt,
                side,
                out: out.as_deref(),
            },
        ),
        Command::Select {
            prompt,
            id,
            pool,
            out,
            ..
        } => commands::select(
            &cfg,
            prompt,
            &id,
            pool.as_deref(),
            out.as_deref(),
            g.dry_run,
        ),
        Command::Batch {
            inputs,
            out,
            pool,
            summary,
            ..
        } => commands::batch(
            &cfg,
            &inputs,
            &out,
            pool.as_deref(),
            summary.as_deref(),
            g.dry_run,
        ),
        Command::EvalMrr { runs, gold, json } => commands::eval_mrr(&runs, &gold, json.as_deref()),
        Command::AnalyzeLoss { records, side, out } => {
            commands::analyze_loss(&cfg, &records, side, out.as_deref(), g.dry_run)
        }
        Command::TrainToy {
            corpus,
            out,
            order,
            alpha,
            icl_weight,
        } => commands::train_toy(
            TrainArgs {
                corpus: &corpus,
                out: &out,
                order,
                alpha,
                icl_weight,
            },
            g.dry_run,
        ),
    }
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    if err.downcast_ref::<PartialFailure>().is_some() {
        return ("batch", 5);
    }
    let class = err
        .chain()
        .find_map(|e| e.downcast_ref::<icdpo_core::Error>())
        .map_or(ErrorClass::Data, icdpo_core::Error::class);
    let code = match class {
        ErrorClass::Config => 2,
        ErrorClass::Capability | ErrorClass::Backend => 3,
        ErrorClass::Data => 4,
    };
    (class.as_str(), code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (class, code) = classify(&err);
            let message = format!("{err:#}").replace('\n', "; ");
            eprintln!("error[{class}]: {message}");
            ExitCode::from(code)
        }
    }
}
