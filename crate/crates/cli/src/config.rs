//! On-disk configuration for the `icdpo` tool.
//!
//! Relative paths are resolved against the working directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use icdpo_core::lm::{
    CachedBackend, RemoteBackend, RemoteConfig, ScoreCache, ToyNgramLm, API_KEY_ENV,
};
use icdpo_core::retrieval::{HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use icdpo_core::{Embedder, Error, LengthFilter, LmBackend, PipelineConfig, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub log_level: String,
    /// Append-only score cache; `None` disables caching.
    pub cache_path: Option<PathBuf>,
    pub backend: BackendConfig,
    pub embedder: EmbedderConfig,
    pub length_filter: LengthFilter,
    pub pipeline: PipelineConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            log_level: "info".into(),
            cache_path: None,
            backend: BackendConfig::default(),
            embedder: EmbedderConfig::default(),
            length_filter: LengthFilter::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

fn default_api_key_env() -> String {
    API_KEY_ENV.to_owned()
}

fn default_dim() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Toy {
        model_path: PathBuf,
    },
    Remote {
        /// Base URL including the API version prefix.
        base_url: String,
        model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
        #[serde(default)]
        max_in_flight: Option<usize>,
        #[serde(default)]
        max_attempts: Option<u32>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Toy {
            model_path: PathBuf::from("fixtures/toy_lm.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Hash {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote {
        base_url: String,
        model: String,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hash { dim: default_dim() }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub backend_url: Option<String>,
    pub model: Option<String>,
    pub log_level: Option<String>,
    pub no_cache: bool,
}

fn check_url(field: &str, url: &str, problems: &mut Vec<String>) {
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        problems.push(format!(
            "{field} must start with http:// or https:// (got `{url}`)"
        ));
    }
}

impl AppConfig {
    /// Parses and validates a TOML file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(problems) => Error::Config(
                problems
                    .into_iter()
                    .map(|p| format!("{}: {p}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: AppConfig =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_owned()]))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.pipeline.generation.seed = seed;
        }
        if let Some(workers) = o.workers {
            self.pipeline.workers = workers;
        }
        if let Some(level) = &o.log_level {
            self.log_level = level.clone();
        }
        if o.no_cache {
            self.cache_path = None;
        }
        match (&o.backend_url, &mut self.backend) {
            (
                Some(url),
                BackendConfig::Remote {
                    base_url, model, ..
                },
            ) => {
                *base_url = url.clone();
                if let Some(m) = &o.model {
                    *model = m.clone();
                }
            }
            (Some(url), BackendConfig::Toy { .. }) => {
                let model = o.model.clone().ok_or_else(|| {
                    Error::Config(vec![
                        "--backend-url needs --model when the config uses the toy backend".into(),
                    ])
                })?;
                self.backend = BackendConfig::Remote {
                    base_url: url.clone(),
                    model,
                    api_key_env: default_api_key_env(),
                    max_in_flight: None,
                    max_attempts: None,
                    timeout_secs: None,
                };
            }
            (None, BackendConfig::Toy { model_path }) => {
                if let Some(m) = &o.model {
                    *model_path = PathBuf::from(m);
                }
            }
            (None, BackendConfig::Remote { model, .. }) => {
                if let Some(m) = &o.model {
                    *model = m.clone();
                }
            }
        }
        self.check()
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if log::LevelFilter::from_str(&self.log_level).is_err() {
            problems.push(format!(
                "log_level `{}` is not one of off, error, warn, info, debug, trace",
                self.log_level
            ));
        }
        if let Some(path) = &self.cache_path {
            if path.as_os_str().is_empty() {
                problems.push("cache_path must not be empty".into());
            } else if std::fs::metadata(path).is_ok_and(|m| m.permissions().readonly()) {
                problems.push(format!("cache_path {} is read-only", path.display()));
            } else if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() && !parent.is_dir() {
                    problems.push(format!(
                        "cache_path directory {} does not exist",
                        parent.display()
                    ));
                }
            }
        }
        match &self.backend {
            BackendConfig::Toy { model_path } => {
                if model_path.as_os_str().is_empty() {
                    problems.push("backend.model_path must not be empty".into());
                }
            }
            BackendConfig::Remote {
                base_url,
                model,
                api_key_env,
                max_in_flight,
                max_attempts,
                ..
            } => {
                check_url("backend.base_url", base_url, &mut problems);
                if model.is_empty() {
                    problems.push("backend.model must not be empty".into());
                }
                if api_key_env.is_empty() {
                    problems.push("backend.api_key_env must not be empty".into());
                }
                if *max_in_flight == Some(0) {
                    problems.push("backend.max_in_flight must be positive".into());
                }
                if *max_attempts == Some(0) {
                    problems.push("backend.max_attempts must be positive".into());
                }
            }
        }
        match &self.embedder {
            EmbedderConfig::Hash { dim } => {
                if *dim == 0 {
                    problems.push("embedder.dim must be positive".into());
                }
            }
            EmbedderConfig::Remote {
                base_url, model, ..
            } => {
                check_url("embedder.base_url", base_url, &mut problems);
                if model.is_empty() {
                    problems.push("embedder.model must not be empty".into());
                }
            }
        }
        problems.extend(self.length_filter.validate());
        if self.length_filter.tokenizer_id != icdpo_core::corpus::WHITESPACE_TOKENIZER {
            problems.push(format!(
                "length_filter.tokenizer_id `{}` is not supported (only `whitespace`)",
                self.length_filter.tokenizer_id
            ));
        }
        problems.extend(self.pipeline.validate());
        problems
    }

    pub fn check(&self) -> Result<()> {
        let problems = self.validate();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes to TOML")
    }

    /// Opens the score cache if one is configured.
    pub fn open_cache(&self) -> Result<Option<Arc<ScoreCache>>> {
        self.cache_path
            .as_deref()
            .map(|p| ScoreCache::open(p).map(Arc::new))
            .transpose()
    }

    /// Builds the backend, wrapped in the cache when one is given.
    pub fn build_backend(&self, cache: Option<Arc<ScoreCache>>) -> Result<Box<dyn LmBackend>> {
        let inner: Box<dyn LmBackend> = match &self.backend {
            BackendConfig::Toy { model_path } => Box::new(ToyNgramLm::load(model_path)?),
            BackendConfig::Remote {
                base_url,
                model,
                api_key_env,
                max_in_flight,
                max_attempts,
                timeout_secs,
            } => {
                let mut rc = RemoteConfig::new(base_url.clone(), model.clone());
                rc.api_key = std::env::var(api_key_env).ok();
                if let Some(v) = max_in_flight {
                    rc.max_in_flight = *v;
                }
                if let Some(v) = max_attempts {
                    rc.max_attempts = *v;
                }
                if let Some(v) = timeout_secs {
                    rc.timeout_secs = *v;
                }
                Box::new(RemoteBackend::new(rc))
            }
        };
        Ok(match cache {
            Some(cache) => Box::new(CachedBackend::new(inner, cache)),
            None => inner,
        })
    }

    pub fn build_embedder(&self) -> Box<dyn Embedder> {
        match &self.embedder {
            EmbedderConfig::Hash { dim } => Box::new(HashEmbedder::new(*dim)),
            EmbedderConfig::Remote {
                base_url,
                model,
                api_key_env,
            } => {
                let mut rc = RemoteEmbedderConfig::new(base_url.clone(), model.clone());
                rc.api_key = std::env::var(api_key_env).ok();
                Box::new(RemoteEmbedder::new(rc))
            }
        }
    }
}
