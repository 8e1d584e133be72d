//! Prompt construction and experiment orchestration.
//!
//! An experiment crosses every QA item with every prompt variant (all
//! registry markers plus the bare standard prompt) and records one
//! [`ProbeRecord`] per pair, in a deterministic item-major/template-minor
//! order regardless of how many worker threads execute the requests.
//! Backend failures become error records rather than aborting the run.

use crate::backend::{Backend, Completion, CompletionRequest, ContextTag};
use crate::qa::QAItem;
use crate::typology::{
    instantiate_numeric, MarkerTemplate, NumericGrid, Registry, TypologyError,
};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

/// How prompts are joined. The default places a newline before `"A:"`; the
/// flag exists because some datasets were historically run without it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStyle {
    pub newline_before_answer: bool,
}

impl Default for PromptStyle {
    fn default() -> Self {
        PromptStyle {
            newline_before_answer: true,
        }
    }
}

/// Decoding parameters shared by every request in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_k_alternatives: usize,
}

impl Default for RequestParams {
    fn default() -> Self {
        RequestParams {
            max_tokens: 10,
            temperature: 1.0,
            top_k_alternatives: 5,
        }
    }
}

/// Concurrency and rate limiting for backend calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecPolicy {
    pub concurrency: usize,
    /// Cap on backend requests per second; `None` = unthrottled.
    pub requests_per_second: Option<f64>,
}

impl Default for ExecPolicy {
    fn default() -> Self {
        ExecPolicy {
            concurrency: 4,
            requests_per_second: None,
        }
    }
}

/// Everything a run needs beyond the items, templates, and backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_id: String,
    pub dataset: String,
    pub params: RequestParams,
    pub style: PromptStyle,
    pub seed: u64,
    pub policy: ExecPolicy,
}

impl RunConfig {
    /// Config with default request/style/policy settings and seed 0.
    pub fn default_for(model_id: &str, dataset: &str) -> Self {
        RunConfig {
            model_id: model_id.to_string(),
            dataset: dataset.to_string(),
            params: RequestParams::default(),
            style: PromptStyle::default(),
            seed: 0,
            policy: ExecPolicy::default(),
        }
    }
}

/// One probed (item, template) pair. Exactly one of `completion` / `error`
/// is present. `timestamp` is omitted for deterministic backends so reruns
/// are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub item_id: String,
    pub template_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stated_pct: Option<u8>,
    pub prompt: String,
    pub model_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion: Option<Completion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Recipe sufficient to reproduce a run byte-identically against the mock
/// backend (and to audit a live one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub registry_digest: String,
    pub model_id: String,
    pub backend: String,
    pub params: RequestParams,
    pub style: PromptStyle,
    pub seed: u64,
    pub tool_version: String,
    pub n_items: usize,
    pub n_prompt_variants: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

/// Records plus manifest plus how many records carry errors.
#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<ProbeRecord>,
    pub manifest: RunManifest,
    pub failures: usize,
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("no items to probe")]
    EmptyItems,
    #[error("no templates to probe")]
    EmptyTemplates,
    #[error(transparent)]
    Typology(#[from] TypologyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Join question and marker into the probe prompt.
///
/// Marker case: `"Q: {question}\nA: {surface}"`. Standard sentinel:
/// `"Q: {question}\nA:"`. The result never ends in whitespace, and two
/// prompts for the same item differ only after the `"A:"` delimiter.
pub fn build_prompt(item: &QAItem, template: &MarkerTemplate, style: &PromptStyle) -> String {
    let question = item.question.trim_end();
    let sep = if style.newline_before_answer { "\n" } else { " " };
    let surface = template.surface.trim_end();
    if surface.is_empty() {
        format!("Q: {question}{sep}A:")
    } else {
        format!("Q: {question}{sep}A: {surface}")
    }
}

struct Job {
    index: usize,
    item_id: String,
    template_id: String,
    stated_pct: Option<u8>,
    request: CompletionRequest,
}

/// Simple token bucket: at most `rate` acquisitions per second once the
/// initial burst capacity is spent.
struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64, capacity: f64) -> Self {
        TokenBucket {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().expect("token bucket poisoned");
                let (ref mut tokens, ref mut last) = *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate)
                    .min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                (1.0 - *tokens) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait.min(0.25)));
        }
    }
}

fn execute_jobs(
    jobs: Vec<Job>,
    backend: &dyn Backend,
    policy: &ExecPolicy,
) -> Vec<ProbeRecord> {
    let timestamping = !backend.is_deterministic();
    let bucket = policy
        .requests_per_second
        .filter(|r| *r > 0.0)
        .map(|r| TokenBucket::new(r, policy.concurrency.max(1) as f64));
    let next = AtomicUsize::new(0);
    let workers = policy.concurrency.max(1).min(jobs.len().max(1));
    let jobs = &jobs;
    let bucket = &bucket;
    let next = &next;

    let mut indexed: Vec<(usize, ProbeRecord)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(move || {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= jobs.len() {
                            break;
                        }
                        let job = &jobs[i];
                        if let Some(b) = bucket {
                            b.acquire();
                        }
                        let timestamp = timestamping
                            .then(|| chrono::Utc::now().to_rfc3339());
                        let (completion, error) = match backend.complete(&job.request) {
                            Ok(c) => (Some(c), None),
                            Err(e) => (None, Some(e.to_string())),
                        };
                        local.push((
                            job.index,
                            ProbeRecord {
                                item_id: job.item_id.clone(),
                                template_id: job.template_id.clone(),
                                stated_pct: job.stated_pct,
                                prompt: job.request.prompt.clone(),
                                model_id: job.request.model_id.clone(),
                                timestamp,
                                completion,
                                error,
                            },
                        ));
                    }
                    local
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("probe worker panicked"))
            .collect()
    });
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, r)| r).collect()
}

fn make_job(
    index: usize,
    item: &QAItem,
    template: &MarkerTemplate,
    stated_pct: Option<u8>,
    config: &RunConfig,
) -> Job {
    let prompt = build_prompt(item, template, &config.style);
    Job {
        index,
        item_id: item.id.clone(),
        template_id: template.id.clone(),
        stated_pct,
        request: CompletionRequest {
            prompt,
            max_tokens: config.params.max_tokens,
            temperature: config.params.temperature,
            top_k_alternatives: config.params.top_k_alternatives,
            model_id: config.model_id.clone(),
            seed: config.seed,
            context: Some(ContextTag {
                item_id: item.id.clone(),
                template_id: template.id.clone(),
                features: template.features,
                stated_pct,
            }),
        },
    }
}

fn manifest_for(
    backend: &dyn Backend,
    config: &RunConfig,
    registry_digest: String,
    n_items: usize,
    n_prompt_variants: usize,
) -> RunManifest {
    RunManifest {
        dataset: config.dataset.clone(),
        registry_digest,
        model_id: config.model_id.clone(),
        backend: backend.name().to_string(),
        params: config.params.clone(),
        style: config.style,
        seed: config.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        n_items,
        n_prompt_variants,
        created_at: (!backend.is_deterministic()).then(|| chrono::Utc::now().to_rfc3339()),
    }
}

/// Probe every item with every marker plus the standard prompt.
pub fn run_experiment(
    items: &[QAItem],
    registry: &Registry,
    backend: &dyn Backend,
    config: &RunConfig,
) -> Result<RunOutput, ProbeError> {
    if items.is_empty() {
        return Err(ProbeError::EmptyItems);
    }
    let variants = registry.all_variants();
    if variants.is_empty() {
        return Err(ProbeError::EmptyTemplates);
    }
    let mut jobs = Vec::with_capacity(items.len() * variants.len());
    for item in items {
        for template in &variants {
            jobs.push(make_job(jobs.len(), item, template, None, config));
        }
    }
    let records = execute_jobs(jobs, backend, &config.policy);
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    let manifest = manifest_for(
        backend,
        config,
        registry.digest(),
        items.len(),
        variants.len(),
    );
    Ok(RunOutput {
        records,
        manifest,
        failures,
    })
}

/// Probe items × numeric templates × percentage grid; every record carries
/// its stated percentage.
pub fn run_numeric(
    items: &[QAItem],
    numeric_registry: &Registry,
    grid: &NumericGrid,
    backend: &dyn Backend,
    config: &RunConfig,
) -> Result<RunOutput, ProbeError> {
    if items.is_empty() {
        return Err(ProbeError::EmptyItems);
    }
    let templates = numeric_registry.markers();
    if templates.is_empty() {
        return Err(ProbeError::EmptyTemplates);
    }
    let mut jobs = Vec::with_capacity(items.len() * templates.len() * grid.values().len());
    for item in items {
        for template in templates {
            for &pct in grid.values() {
                let expanded = instantiate_numeric(template, pct)?;
                jobs.push(make_job(jobs.len(), item, &expanded, Some(pct), config));
            }
        }
    }
    let records = execute_jobs(jobs, backend, &config.policy);
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    let manifest = manifest_for(
        backend,
        config,
        numeric_registry.digest(),
        items.len(),
        templates.len() * grid.values().len(),
    );
    Ok(RunOutput {
        records,
        manifest,
        failures,
    })
}

/// One record per line, in run order.
pub fn write_records_jsonl(path: &Path, records: &[ProbeRecord]) -> Result<(), ProbeError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<ProbeRecord>, ProbeError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), ProbeError> {
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, ProbeError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
