//! Configuration file loading and flag/config/default resolution.
//!
//! Values resolve with precedence: command-line flag > config file >
//! built-in default. The API credential is only ever named (environment
//! variable), never stored.

use anyhow::{bail, Context, Result};
use epiprobe_core::backend::cache::CachedBackend;
use epiprobe_core::backend::http::{HttpBackend, HttpBackendConfig};
use epiprobe_core::backend::mock::MockBackend;
use epiprobe_core::backend::Backend;
use epiprobe_core::probe::{ExecPolicy, PromptStyle, RequestParams, RunConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Optional settings read from a TOML config file. Every field can also be
/// set (and is overridden) by the corresponding CLI flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub mock_spec: Option<PathBuf>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub model_id: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
    pub requests_per_second: Option<f64>,
    pub max_tokens: Option<usize>,
    pub temperature: Option<f64>,
    pub top_k_alternatives: Option<usize>,
    pub newline_before_answer: Option<bool>,
    pub n_resamples: Option<usize>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Flags shared by every backend-facing subcommand.
#[derive(Debug, Clone, clap::Args)]
pub struct BackendArgs {
    /// Backend kind: "mock" or "http".
    #[arg(long)]
    pub backend: Option<String>,
    /// Mock model description (JSON), for --backend mock.
    #[arg(long)]
    pub mock_spec: Option<PathBuf>,
    /// Completions endpoint base URL, for --backend http.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key (the key
    /// itself is read from the environment and never written anywhere).
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Model identifier recorded in the manifest and sent to HTTP backends.
    #[arg(long)]
    pub model_id: Option<String>,
    /// Directory for the on-disk completion cache (omit to disable).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

/// Flags controlling request generation.
#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Run seed; all randomness flows from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for backend calls.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Client-side rate limit for backend calls.
    #[arg(long)]
    pub requests_per_second: Option<f64>,
    /// Completion length in tokens.
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Sampling temperature (0 = greedy).
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Alternatives recorded per step.
    #[arg(long)]
    pub top_k_alternatives: Option<usize>,
    /// Put the answer line on its own line ("Q: …\nA:").
    #[arg(long)]
    pub newline_before_answer: Option<bool>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub backend_kind: String,
    pub mock_spec: Option<PathBuf>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub model_id: String,
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub params: RequestParams,
    pub style: PromptStyle,
    pub policy: ExecPolicy,
}

pub fn resolve(backend: &BackendArgs, run: &RunArgs, file: &FileConfig) -> Settings {
    let params_default = RequestParams::default();
    let policy_default = ExecPolicy::default();
    let backend_kind = backend
        .backend
        .clone()
        .or_else(|| file.backend.clone())
        .unwrap_or_else(|| "mock".to_string());
    Settings {
        mock_spec: backend.mock_spec.clone().or_else(|| file.mock_spec.clone()),
        base_url: backend.base_url.clone().or_else(|| file.base_url.clone()),
        api_key_env: backend
            .api_key_env
            .clone()
            .or_else(|| file.api_key_env.clone()),
        model_id: backend
            .model_id
            .clone()
            .or_else(|| file.model_id.clone())
            .unwrap_or_else(|| backend_kind.clone()),
        cache_dir: backend.cache_dir.clone().or_else(|| file.cache_dir.clone()),
        seed: run.seed.or(file.seed).unwrap_or(0),
        params: RequestParams {
            max_tokens: run
                .max_tokens
                .or(file.max_tokens)
                .unwrap_or(params_default.max_tokens),
            temperature: run
                .temperature
                .or(file.temperature)
                .unwrap_or(params_default.temperature),
            top_k_alternatives: run
                .top_k_alternatives
                .or(file.top_k_alternatives)
                .unwrap_or(params_default.top_k_alternatives),
        },
        style: PromptStyle {
            newline_before_answer: run
                .newline_before_answer
                .or(file.newline_before_answer)
                .unwrap_or(PromptStyle::default().newline_before_answer),
        },
        policy: ExecPolicy {
            concurrency: run
                .concurrency
                .or(file.concurrency)
                .unwrap_or(policy_default.concurrency),
            requests_per_second: run.requests_per_second.or(file.requests_per_second),
        },
        backend_kind,
    }
}

impl Settings {
    pub fn run_config(&self, dataset: &str) -> RunConfig {
        RunConfig {
            model_id: self.model_id.clone(),
            dataset: dataset.to_string(),
            params: self.params.clone(),
            style: self.style.clone(),
            seed: self.seed,
            policy: self.policy.clone(),
        }
    }

    /// Build the configured backend, wrapped in the on-disk cache when a
    /// cache directory is set.
    pub fn build_backend(&self) -> Result<Box<dyn Backend>> {
        let inner: Box<dyn Backend> = match self.backend_kind.as_str() {
            "mock" => {
                let spec = self
                    .mock_spec
                    .as_ref()
                    .context("--backend mock requires --mock-spec <path>")?;
                Box::new(MockBackend::from_path(spec)?)
            }
            "http" => {
                let defaults = HttpBackendConfig::default();
                Box::new(HttpBackend::new(HttpBackendConfig {
                    base_url: self.base_url.clone().unwrap_or(defaults.base_url),
                    api_key_env: self.api_key_env.clone(),
                    ..defaults
                })?)
            }
            other => bail!("unknown backend kind {other:?} (expected \"mock\" or \"http\")"),
        };
        Ok(match &self.cache_dir {
            Some(dir) => Box::new(CachedBackend::new(inner, dir)?),
            None => inner,
        })
    }
}
