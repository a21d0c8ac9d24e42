//! Inference-time preference alignment without fine-tuning.
//!
//! For a prompt `x` the engine retrieves demonstrations `d` from a pool of
//! preference pairs, samples `n` candidates from `pi(y | [d; x])`, and keeps
//! the candidate whose contrastive score is largest:
//!
//! * `S(y) = log pi(y | [d+; x]) - log pi(y | x)`
//! * `Ŝ(y) = log pi(y | [d+; x]) - log pi(y | [d-; x])`
//!
//! Any [`lm::LmBackend`] works; [`lm::ToyNgramLm`] is an exact, deterministic
//! model for tests and [`lm::RemoteBackend`] talks to an OpenAI-style
//! completions server.

pub mod corpus;
pub mod error;
pub mod eval;
mod http;
pub mod lm;
pub mod pipeline;
pub mod prompting;
pub mod retrieval;
pub mod scoring;

pub use corpus::{LengthFilter, PreferenceRecord, Source};
pub use error::{Error, ErrorClass, Result};
pub use eval::{ConsistencyReport, RankedQuery};
pub use lm::{GenerationParams, LmBackend, SequenceScore};
pub use pipeline::{
    derive_seed, BatchSummary, DemoSelection, InputItem, Pipeline, PipelineConfig, RunRecord,
};
pub use prompting::{Demonstration, PromptBundle, Style};
pub use retrieval::{DemoPool, Embedder, RetrievalConfig};
pub use scoring::{ScoreMode, ScoredCandidate, ScorerTag};
