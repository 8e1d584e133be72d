//! Language-model completion backends.
//!
//! Everything downstream (probe runner, scoring) talks to the [`Backend`]
//! trait. Three implementations ship here:
//!
//! * [`mock::MockBackend`] — a deterministic test double driven by a JSON
//!   fixture of per-question answer distributions.
//! * [`http::HttpBackend`] — an OpenAI-style `/completions` client with
//!   bounded retries.
//! * [`cache::CachedBackend`] — a decorator that persists completions in a
//!   content-addressed directory.
//!
//! All probabilities are carried as natural-log values; conversion to linear
//! probability happens in scoring only.

pub mod cache;
pub mod http;
pub mod mock;

use crate::typology::LinguisticFeatures;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Provenance the probe runner attaches to each request so the mock backend
/// can pick the right answer distribution and apply feature modifiers. The
/// HTTP backend ignores it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTag {
    pub item_id: String,
    pub template_id: String,
    pub features: LinguisticFeatures,
    pub stated_pct: Option<u8>,
}

/// One completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    /// At least 1.
    pub max_tokens: usize,
    /// 0 means greedy argmax decoding.
    pub temperature: f64,
    /// Number of per-step alternatives to request; 0 disables them.
    pub top_k_alternatives: usize,
    pub model_id: String,
    /// Run-level seed; deterministic backends fold it into their sampling.
    pub seed: u64,
    pub context: Option<ContextTag>,
}

/// One generated token with its log-probability and the distribution of the
/// most probable alternatives at that step (the emitted token included when
/// the backend reports distributions at all).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStep {
    pub token: String,
    /// Natural log; absent for text-only endpoints.
    pub logprob: Option<f64>,
    /// token → natural-log probability; ordered map so serialization is
    /// byte-stable.
    #[serde(default)]
    pub alternatives: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Length,
    Stop,
    Other,
}

/// A model completion: the token steps plus their concatenation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub steps: Vec<TokenStep>,
    /// Concatenation of step tokens (tokens carry their own leading spaces).
    pub text: String,
    pub finish_reason: FinishReason,
}

impl Completion {
    /// Rebuild `text` from steps; used by backends after assembling steps.
    pub fn from_steps(steps: Vec<TokenStep>, finish_reason: FinishReason) -> Self {
        let text = steps.iter().map(|s| s.token.as_str()).collect();
        Completion {
            steps,
            text,
            finish_reason,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {msg}")]
    Transport { attempts: u32, msg: String },
    #[error("endpoint returned malformed response: {0}")]
    Protocol(String),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("mock model has no question '{0}'")]
    UnknownQuestion(String),
    #[error("request carries no context tag; mock completions need one")]
    MissingContext,
    #[error("invalid mock model spec: {0}")]
    InvalidSpec(String),
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
}

/// A completion provider. Implementations must be shareable across threads;
/// `complete` may be called concurrently up to the caller's configured bound.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;

    /// Per-token log-probabilities of `continuation` given `context`
    /// (echo/scoring mode). Not every backend can do this.
    fn score_text(&self, _context: &str, _continuation: &str) -> Result<Vec<TokenStep>, BackendError> {
        Err(BackendError::Unsupported("score_text"))
    }

    /// True when identical requests always produce identical completions;
    /// lets the runner omit wall-clock timestamps so runs are byte-stable.
    fn is_deterministic(&self) -> bool {
        false
    }

    /// Short human-readable backend name for logs and manifests.
    fn name(&self) -> &str;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn score_text(&self, context: &str, continuation: &str) -> Result<Vec<TokenStep>, BackendError> {
        (**self).score_text(context, continuation)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}
