//! Client for OpenAI-style `/completions` endpoints.
//!
//! Scoring uses prompt echo: the server is asked to echo
//! `context + completion` with per-token log-probabilities, and the tokens
//! whose character offsets fall inside the completion are kept. A token that
//! straddles the context/completion boundary is an alignment error.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Capabilities, GenerationParams, LmBackend, SequenceScore, TokenLogprob};
use crate::error::{Error, Result};
use crate::http::{HttpSettings, JsonClient};

pub const BASE_URL_ENV: &str = "ICDPO_BASE_URL";
pub const API_KEY_ENV: &str = "ICDPO_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL including the API version prefix, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            max_in_flight: 4,
            max_attempts: 3,
            backoff_ms: 200,
            timeout_secs: 120,
        }
    }

    /// Reads the base URL and optional API key from the environment.
    pub fn from_env(model: impl Into<String>) -> Result<Self> {
        let base = std::env::var(BASE_URL_ENV)
            .map_err(|_| Error::Config(vec![format!("{BASE_URL_ENV} is not set")]))?;
        let mut cfg = Self::new(base, model);
        cfg.api_key = std::env::var(API_KEY_ENV).ok();
        Ok(cfg)
    }

    fn settings(&self) -> HttpSettings {
        HttpSettings {
            api_key: self.api_key.clone(),
            max_in_flight: self.max_in_flight,
            max_attempts: self.max_attempts.max(1),
            backoff: Duration::from_millis(self.backoff_ms),
            timeout: Duration::from_secs(self.timeout_secs),
        }
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_p: Option<f64>,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    echo: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    index: usize,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    id: String,
    client: JsonClient,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let id = format!(
            "remote:{}@{}",
            config.model,
            config.base_url.trim_end_matches('/')
        );
        Self {
            client: JsonClient::new(config.settings()),
            config,
            id,
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl LmBackend for RemoteBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            deterministic_sampling: false,
            prompt_logprobs: true,
        }
    }

    fn complete(&self, context: &str, params: &GenerationParams) -> Result<Vec<String>> {
        let problems = params.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let req = CompletionRequest {
            model: &self.config.model,
            prompt: context,
            max_tokens: params.max_tokens,
            temperature: Some(if params.greedy {
                0.0
            } else {
                params.temperature
            }),
            top_p: Some(if params.greedy { 1.0 } else { params.top_p }),
            n: params.n,
            seed: Some(params.seed),
            echo: false,
            logprobs: None,
        };
        let mut resp: CompletionResponse = self.client.post(&self.url(), &req)?;
        if resp.choices.len() != params.n {
            return Err(Error::Capability(format!(
                "asked for {} samples but the server returned {}",
                params.n,
                resp.choices.len()
            )));
        }
        resp.choices.sort_by_key(|c| c.index);
        Ok(resp.choices.into_iter().map(|c| c.text).collect())
    }

    fn score(&self, context: &str, completion: &str) -> Result<SequenceScore> {
        if completion.is_empty() {
            return Ok(SequenceScore::empty());
        }
        let prompt = format!("{context}{completion}");
        let req = CompletionRequest {
            model: &self.config.model,
            prompt: &prompt,
            max_tokens: 1,
            temperature: None,
            top_p: None,
            n: 1,
            seed: None,
            echo: true,
            logprobs: Some(1),
        };
        let resp: CompletionResponse = self.client.post(&self.url(), &req)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::Data("completion response has no choices".into()))?;
        let logprobs = choice.logprobs.ok_or_else(|| {
            Error::Capability("server returned no prompt log-probabilities".into())
        })?;
        align_completion(context, completion, &logprobs)
    }
}

/// Picks the echoed tokens that cover exactly `completion`, using character
/// offsets into `context + completion`.
fn align_completion(context: &str, completion: &str, lp: &Logprobs) -> Result<SequenceScore> {
    if lp.tokens.len() != lp.token_logprobs.len() || lp.tokens.len() != lp.text_offset.len() {
        return Err(Error::Data(
            "log-probability arrays have different lengths".into(),
        ));
    }
    let ctx_len = context.chars().count();
    let full_len = ctx_len + completion.chars().count();

    let mut echoed = String::new();
    let mut picked = Vec::new();
    for ((tok, lp), &off) in lp
        .tokens
        .iter()
        .zip(&lp.token_logprobs)
        .zip(&lp.text_offset)
    {
        if off >= full_len {
            break;
        }
        echoed.push_str(tok);
        let end = off + tok.chars().count();
        if end <= ctx_len {
            continue;
        }
        if off < ctx_len {
            return Err(Error::Alignment(format!(
                "token {tok:?} at offset {off} spans the context/completion boundary at {ctx_len}"
            )));
        }
        if end > full_len {
            return Err(Error::Alignment(format!(
                "token {tok:?} at offset {off} runs past the end of the completion"
            )));
        }
        let logprob = lp.ok_or_else(|| {
            Error::Capability(format!(
                "server omitted the log-probability of prompt token {tok:?}"
            ))
        })?;
        picked.push(TokenLogprob {
            token: tok.clone(),
            logprob,
        });
    }
    if echoed.is_empty() {
        return Err(Error::Capability("server did not echo the prompt".into()));
    }
    let rebuilt: String = picked.iter().map(|t| t.token.as_str()).collect();
    if rebuilt != completion {
        return Err(Error::Alignment(format!(
            "echoed completion tokens {rebuilt:?} do not reproduce {completion:?}"
        )));
    }
    Ok(SequenceScore::from_tokens(picked))
}
