//! `teach` subcommand implementations: pool construction from a scored
//! run, prompted generation with marker detection, and emission-calibration
//! evaluation. Also the `cache` maintenance commands.

use crate::config::Settings;
use anyhow::{bail, Context, Result};
use epiprobe_core::backend::cache::{cache_usage, clear_cache};
use epiprobe_core::backend::{CompletionRequest, ContextTag};
use epiprobe_core::probe::ProbeRecord;
use epiprobe_core::qa::{load_qa_jsonl, FieldMap, QAItem};
use epiprobe_core::scoring::{read_scored_jsonl, score_record, ScoringOptions};
use epiprobe_core::teach::{
    attach_markers, build_fewshot_pool, detect_emission, evaluate_emission,
    render_fewshot_prompt, teach_marker, Direction, EmissionRecord, FewShotExample, Ordering,
    Placement, PoolCandidate, TeachConfig,
};
use epiprobe_core::typology::{LinguisticFeatures, STANDARD_TEMPLATE_ID};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, clap::Args)]
pub struct TeachArgs {
    /// Marker direction the teaching rule uses.
    #[arg(long, value_enum, default_value_t = DirectionArg::Certainty)]
    pub direction: DirectionArg,
    /// Confidence threshold in (0,1).
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = PlacementArg::Suffix)]
    pub placement: PlacementArg,
    #[arg(long, value_enum, default_value_t = OrderingArg::Random)]
    pub ordering: OrderingArg,
    /// Built-in marker-pair id (see fixtures: undoubtedly, i_think, …).
    #[arg(long, default_value = "i_think")]
    pub marker: String,
}

macro_rules! mirror_enum {
    ($cli:ident, $core:ty, $($variant:ident),+) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
        pub enum $cli { $($variant),+ }
        impl From<$cli> for $core {
            fn from(v: $cli) -> Self {
                match v { $($cli::$variant => <$core>::$variant),+ }
            }
        }
    };
}

mirror_enum!(DirectionArg, Direction, Certainty, Uncertainty);
mirror_enum!(PlacementArg, Placement, Prefix, Suffix);
mirror_enum!(OrderingArg, Ordering, Ascending, Descending, Random);

impl TeachArgs {
    pub fn config(&self) -> Result<TeachConfig> {
        let marker = teach_marker(&self.marker)?;
        let config = TeachConfig {
            direction: self.direction.into(),
            threshold: self.threshold,
            placement: self.placement.into(),
            ordering: self.ordering.into(),
            marker,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolFile {
    config: TeachConfig,
    examples: Vec<FewShotExample>,
}

/// Build the few-shot pool from a scored run. Confidence comes from the
/// bare (standard-template) records so the pool measures the model, not a
/// marker.
pub fn teach_build(
    run_dir: &Path,
    args: &TeachArgs,
    buckets: usize,
    total: usize,
    out: &Path,
) -> Result<()> {
    let config = args.config()?;
    let scored = read_scored_jsonl(&run_dir.join("scored.jsonl"))
        .context("run `eval score` first: scored.jsonl is missing or unreadable")?;
    let items = crate::run::read_items_jsonl(&run_dir.join("items.jsonl"))?;
    let candidates: Vec<PoolCandidate> = scored
        .iter()
        .filter(|r| r.template_id == STANDARD_TEMPLATE_ID && !r.failed)
        .filter_map(|r| {
            let item = items.iter().find(|i| i.id == r.item_id)?;
            Some(PoolCandidate {
                question: item.question.clone(),
                answer: item.primary_answer().to_string(),
                prob_on_gold: r.prob_on_gold?,
            })
        })
        .collect();
    if candidates.is_empty() {
        bail!("no usable standard-template records with probability-on-gold");
    }
    let mut examples = build_fewshot_pool(&candidates, buckets, total)?;
    attach_markers(&mut examples, &config)?;
    let marked = examples.iter().filter(|e| e.marker_attached).count();
    let pool = PoolFile { config, examples };
    std::fs::write(out, serde_json::to_string_pretty(&pool)? + "\n")?;
    println!(
        "built pool of {} examples ({} marked) from {} candidates -> {}",
        pool.examples.len(),
        marked,
        candidates.len(),
        out.display()
    );
    Ok(())
}

/// One generation against a marker-taught prompt.
#[derive(Debug, Serialize, Deserialize)]
struct TeachRunRecord {
    item_id: String,
    text: String,
    #[serde(flatten)]
    emission: EmissionRecord,
}

fn marker_surface(config: &TeachConfig) -> &str {
    match config.placement {
        Placement::Prefix => &config.marker.prefix_form,
        Placement::Suffix => &config.marker.suffix_form,
    }
}

pub fn teach_run(
    pool_path: &Path,
    items_path: &Path,
    out: &Path,
    settings: &Settings,
) -> Result<()> {
    let pool: PoolFile = serde_json::from_str(
        &std::fs::read_to_string(pool_path)
            .with_context(|| format!("reading pool {}", pool_path.display()))?,
    )?;
    let items: Vec<QAItem> = load_qa_jsonl(items_path, &FieldMap::default(), "custom")?.items;
    if items.is_empty() {
        bail!("no query items");
    }
    let backend = settings.build_backend()?;
    let options = ScoringOptions::default();
    let surface = marker_surface(&pool.config).to_string();
    let template_id = format!("teach_{}", pool.config.marker.id);
    let mut lines = String::new();
    let mut n_ok = 0usize;
    for (idx, item) in items.iter().enumerate() {
        let prompt = render_fewshot_prompt(
            &pool.examples,
            &pool.config,
            &item.question,
            settings.seed.wrapping_add(idx as u64),
        )?;
        let request = CompletionRequest {
            prompt,
            max_tokens: settings.params.max_tokens,
            temperature: settings.params.temperature,
            top_k_alternatives: settings.params.top_k_alternatives,
            model_id: settings.model_id.clone(),
            seed: settings.seed,
            context: Some(ContextTag {
                item_id: item.id.clone(),
                template_id: template_id.clone(),
                features: LinguisticFeatures::neutral(),
                stated_pct: None,
            }),
        };
        let completion = match backend.complete(&request) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("item {}: {e}", item.id);
                continue;
            }
        };
        let text = completion.text.clone();
        let top_token_prob = completion
            .steps
            .first()
            .and_then(|s| s.logprob)
            .map(f64::exp)
            .unwrap_or(0.0);
        let probe = ProbeRecord {
            item_id: item.id.clone(),
            template_id: template_id.clone(),
            stated_pct: None,
            prompt: request.prompt.clone(),
            model_id: settings.model_id.clone(),
            timestamp: None,
            completion: Some(completion),
            error: None,
        };
        let scored = score_record(&probe, &item.gold_aliases, &options);
        let record = TeachRunRecord {
            item_id: item.id.clone(),
            text: text.clone(),
            emission: EmissionRecord {
                emitted: detect_emission(&text, &surface),
                top_token_prob,
                prob_on_gold: scored.prob_on_gold,
                correct: scored.correct,
                alt_entropy: scored.alt_entropy,
            },
        };
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
        n_ok += 1;
    }
    if n_ok == 0 {
        bail!("every generation failed");
    }
    std::fs::write(out, lines)?;
    println!("wrote {n_ok} emission records to {}", out.display());
    Ok(())
}

pub fn teach_evaluate(emissions_path: &Path, args: &TeachArgs) -> Result<()> {
    let config = args.config()?;
    let text = std::fs::read_to_string(emissions_path)
        .with_context(|| format!("reading emissions {}", emissions_path.display()))?;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: TeachRunRecord = serde_json::from_str(line)?;
        records.push(record.emission);
    }
    let eval = evaluate_emission(&records, &config)?;
    println!("{}", serde_json::to_string_pretty(&eval)?);
    Ok(())
}

pub fn cache_stats(dir: &Path) -> Result<()> {
    let usage = cache_usage(dir)?;
    println!(
        "cache {}: {} entries, {} bytes",
        dir.display(),
        usage.entries,
        usage.bytes
    );
    Ok(())
}

pub fn cache_clear(dir: &Path) -> Result<()> {
    let removed = clear_cache(dir)?;
    println!("removed {removed} cache entries from {}", dir.display());
    Ok(())
}
