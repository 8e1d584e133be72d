//! `eval` and `numeric` subcommand implementations: probe runs, scoring,
//! and report emission over a run directory.
//!
//! A run directory is self-contained: manifest.json, registry.tsv,
//! items.jsonl, records.jsonl (+ perplexity.csv when the backend can score
//! text), then scored.jsonl after `score` and report.csv/json + charts/
//! after `report`. Reports are pure functions of these files and never
//! contact a backend.

use crate::config::Settings;
use anyhow::{bail, Context, Result};
use epiprobe_core::backend::Backend;
use epiprobe_core::probe::{
    build_prompt, read_records_jsonl, run_experiment, run_numeric, write_manifest,
    write_records_jsonl, RunOutput,
};
use epiprobe_core::qa::{
    builtin_country_pairs, generate_country_qa, load_qa_jsonl, sample_subset, FieldMap, QAItem,
};
use epiprobe_core::report::{
    numeric_report, svg_feature_bars, svg_numeric_curves, template_rows, top_templates,
    write_aggregates_csv, write_numeric_csv, write_report_json, FeatureReport,
};
use epiprobe_core::scoring::{
    aggregate_by_feature, pearson, read_scored_jsonl, score_records, template_perplexity,
    write_scored_jsonl, GroupSpec, ScoredResult, ScoringError, ScoringOptions,
};
use epiprobe_core::typology::{
    FeaturePredicate, NumericGrid, Registry, Shield, Strength, STANDARD_TEMPLATE_ID,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Dataset flags shared by `eval run` and `numeric run`.
#[derive(Debug, Clone, clap::Args)]
pub struct DatasetArgs {
    /// QA items as JSONL (fields: id, question, answers).
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Use the built-in country-capital dataset instead of --items.
    #[arg(long, default_value_t = false)]
    pub country_capitals: bool,
    /// Probe only a seeded random subset of this size.
    #[arg(long)]
    pub sample: Option<usize>,
}

pub fn load_items(args: &DatasetArgs, seed: u64) -> Result<(Vec<QAItem>, String)> {
    let (mut items, dataset) = if let Some(path) = &args.items {
        let loaded = load_qa_jsonl(path, &FieldMap::default(), "custom")?;
        for warning in &loaded.warnings {
            log::warn!("{warning}");
        }
        (loaded.items, "custom".to_string())
    } else if args.country_capitals {
        let items = generate_country_qa(&builtin_country_pairs())?;
        (items, "country_capitals".to_string())
    } else {
        bail!("no dataset: pass --items <jsonl> or --country-capitals");
    };
    if let Some(n) = args.sample {
        items = sample_subset(&items, n, seed)?;
    }
    Ok((items, dataset))
}

pub fn load_registry(path: Option<&Path>) -> Result<Registry> {
    Ok(match path {
        Some(p) => Registry::from_path(p)?,
        None => Registry::builtin(),
    })
}

fn write_items_jsonl(path: &Path, items: &[QAItem]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read back a run directory's items.jsonl (written by [`persist_run`] as
/// straight `QAItem` rows, unlike user-supplied datasets which go through a
/// [`FieldMap`]).
pub fn read_items_jsonl(path: &Path) -> Result<Vec<QAItem>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading items {}", path.display()))?;
    let mut items = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: QAItem =
            serde_json::from_str(line).with_context(|| format!("items line {}", idx + 1))?;
        items.push(item);
    }
    Ok(items)
}

/// Score every marker's surface against the first item's bare prompt and
/// write template_id,perplexity rows. Skipped (with a log line) when the
/// backend cannot score text.
fn write_perplexity_csv(
    path: &Path,
    registry: &Registry,
    items: &[QAItem],
    backend: &dyn Backend,
    settings: &Settings,
) -> Result<bool> {
    let Some(first) = items.first() else {
        return Ok(false);
    };
    let carrier = build_prompt(first, registry.standard(), &settings.style);
    let mut rows = Vec::new();
    for template in registry.markers() {
        match template_perplexity(template, &carrier, backend) {
            Ok(ppl) => rows.push((template.id.clone(), ppl)),
            Err(ScoringError::Backend(e)) => {
                log::info!("backend cannot score text ({e}); skipping perplexity");
                return Ok(false);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["template_id", "perplexity"])?;
    for (id, ppl) in rows {
        w.write_record([id, format!("{ppl:.9}")])?;
    }
    w.flush()?;
    Ok(true)
}

fn persist_run(
    out: &Path,
    output: &RunOutput,
    items: &[QAItem],
    registry: &Registry,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_manifest(&out.join("manifest.json"), &output.manifest)?;
    std::fs::write(out.join("registry.tsv"), registry.to_tsv())?;
    write_items_jsonl(&out.join("items.jsonl"), items)?;
    write_records_jsonl(&out.join("records.jsonl"), &output.records)?;
    Ok(())
}

pub fn eval_run(
    out: &Path,
    dataset_args: &DatasetArgs,
    registry_path: Option<&Path>,
    settings: &Settings,
) -> Result<()> {
    let (items, dataset) = load_items(dataset_args, settings.seed)?;
    let registry = load_registry(registry_path)?;
    let report = registry.validate();
    if !report.is_clean() {
        bail!("registry has {} violations; run `templates validate`", report.violations.len());
    }
    let backend = settings.build_backend()?;
    let config = settings.run_config(&dataset);
    let output = run_experiment(&items, &registry, &backend, &config)?;
    persist_run(out, &output, &items, &registry)?;
    let scored_text = write_perplexity_csv(
        &out.join("perplexity.csv"),
        &registry,
        &items,
        &backend,
        settings,
    )?;
    println!(
        "probed {} items x {} prompt variants -> {} records ({} failures) in {}",
        output.manifest.n_items,
        output.manifest.n_prompt_variants,
        output.records.len(),
        output.failures,
        out.display()
    );
    if scored_text {
        println!("wrote template perplexities to {}", out.join("perplexity.csv").display());
    }
    if output.failures == output.records.len() {
        bail!("every request failed; check backend configuration");
    }
    Ok(())
}

pub fn numeric_run(
    out: &Path,
    dataset_args: &DatasetArgs,
    grid: Option<&[u8]>,
    settings: &Settings,
) -> Result<()> {
    let (items, dataset) = load_items(dataset_args, settings.seed)?;
    let registry = Registry::numeric_builtin();
    let grid = match grid {
        Some(values) => NumericGrid::new(values.to_vec())?,
        None => NumericGrid::default_grid(),
    };
    let backend = settings.build_backend()?;
    let config = settings.run_config(&dataset);
    let output = run_numeric(&items, &registry, &grid, &backend, &config)?;
    persist_run(out, &output, &items, &registry)?;
    println!(
        "probed {} items x {} numeric prompts -> {} records ({} failures) in {}",
        output.manifest.n_items,
        output.manifest.n_prompt_variants,
        output.records.len(),
        output.failures,
        out.display()
    );
    Ok(())
}

pub fn eval_score(run_dir: &Path, negation_guard: bool, max_steps: usize) -> Result<()> {
    let records = read_records_jsonl(&run_dir.join("records.jsonl"))
        .context("run `eval run` first: records.jsonl is missing or unreadable")?;
    let items = read_items_jsonl(&run_dir.join("items.jsonl"))?;
    let options = ScoringOptions {
        max_steps,
        negation_guard,
    };
    let scored = score_records(&records, &items, &options)?;
    let path = run_dir.join("scored.jsonl");
    write_scored_jsonl(&path, &scored)?;
    let usable: Vec<&ScoredResult> = scored.iter().filter(|r| !r.failed).collect();
    let correct = usable.iter().filter(|r| r.correct).count();
    println!(
        "scored {} records ({} failed); overall accuracy {:.4} -> {}",
        scored.len(),
        scored.len() - usable.len(),
        correct as f64 / usable.len().max(1) as f64,
        path.display()
    );
    Ok(())
}

/// The feature axes `eval report --by` accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportAxis {
    Strength,
    Factive,
    Evidential,
    Shield,
    Sourced,
    Pronoun,
    Template,
}

fn axis_groups(axis: ReportAxis) -> Option<(GroupSpec, GroupSpec)> {
    let spec = |label: &str, predicate: FeaturePredicate| GroupSpec {
        label: label.to_string(),
        predicate,
    };
    let base = FeaturePredicate::default();
    Some(match axis {
        ReportAxis::Strength => (
            spec(
                "weakener",
                FeaturePredicate {
                    strength: Some(Strength::Weakener),
                    ..base
                },
            ),
            spec(
                "strengthener",
                FeaturePredicate {
                    strength: Some(Strength::Strengthener),
                    ..base
                },
            ),
        ),
        ReportAxis::Factive => (
            spec(
                "factive",
                FeaturePredicate {
                    factive: Some(true),
                    ..base
                },
            ),
            spec(
                "non-factive",
                FeaturePredicate {
                    factive: Some(false),
                    ..base
                },
            ),
        ),
        ReportAxis::Evidential => (
            spec(
                "evidential",
                FeaturePredicate {
                    evidential: Some(true),
                    ..base
                },
            ),
            spec(
                "non-evidential",
                FeaturePredicate {
                    evidential: Some(false),
                    ..base
                },
            ),
        ),
        ReportAxis::Shield => (
            spec(
                "plausibility-shield",
                FeaturePredicate {
                    shield: Some(Shield::Plausibility),
                    ..base
                },
            ),
            spec(
                "no-shield",
                FeaturePredicate {
                    shield: Some(Shield::None),
                    ..base
                },
            ),
        ),
        ReportAxis::Sourced => (
            spec(
                "sourced",
                FeaturePredicate {
                    sourced: Some(true),
                    ..base
                },
            ),
            spec(
                "unsourced",
                FeaturePredicate {
                    sourced: Some(false),
                    ..base
                },
            ),
        ),
        ReportAxis::Pronoun => (
            spec(
                "first-person",
                FeaturePredicate {
                    first_person: Some(true),
                    ..base
                },
            ),
            spec(
                "non-first-person",
                FeaturePredicate {
                    first_person: Some(false),
                    ..base
                },
            ),
        ),
        ReportAxis::Template => return None,
    })
}

#[derive(Serialize)]
struct PerplexityCorrelation {
    n: usize,
    pearson_r: f64,
}

fn read_perplexities(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    let mut reader = csv::Reader::from_path(path)?;
    for row in reader.deserialize::<(String, f64)>() {
        let (id, ppl) = row?;
        map.insert(id, ppl);
    }
    Ok(map)
}

pub fn eval_report(run_dir: &Path, axis: ReportAxis, n_resamples: usize, seed: u64) -> Result<()> {
    let scored = read_scored_jsonl(&run_dir.join("scored.jsonl"))
        .context("run `eval score` first: scored.jsonl is missing or unreadable")?;
    let reg_path = run_dir.join("registry.tsv");
    let registry = load_registry(reg_path.exists().then_some(reg_path.as_path()))?;
    let features = {
        let mut map = BTreeMap::new();
        for t in registry.all_variants() {
            map.insert(t.id.clone(), t.features);
        }
        map
    };
    let charts = run_dir.join("charts");
    std::fs::create_dir_all(&charts)?;
    let report = match axis_groups(axis) {
        Some((a, b)) => {
            let comparison = aggregate_by_feature(
                &scored,
                &|template_id| features.get(template_id).copied(),
                &a,
                &b,
                n_resamples,
                seed,
            )?;
            println!(
                "{}: acc {:.4} [{:.4},{:.4}] (n={}) vs {}: acc {:.4} [{:.4},{:.4}] (n={}); t={:.3} p={:.6}",
                comparison.a.group,
                comparison.a.accuracy,
                comparison.a.ci_low,
                comparison.a.ci_high,
                comparison.a.n,
                comparison.b.group,
                comparison.b.accuracy,
                comparison.b.ci_low,
                comparison.b.ci_high,
                comparison.b.n,
                comparison.t,
                comparison.p_value,
            );
            FeatureReport::from_comparison(comparison)
        }
        None => {
            let rows = template_rows(&scored, n_resamples, seed)?;
            println!("top templates by accuracy:");
            for row in top_templates(&rows, 10) {
                println!(
                    "  {:<24} acc {:.4} [{:.4},{:.4}] n={}",
                    row.group, row.accuracy, row.ci_low, row.ci_high, row.n
                );
            }
            let ppl_path = run_dir.join("perplexity.csv");
            if ppl_path.exists() {
                let ppl = read_perplexities(&ppl_path)?;
                let joined: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.group != STANDARD_TEMPLATE_ID)
                    .filter_map(|r| ppl.get(&r.group).map(|p| (*p, r.accuracy)))
                    .collect();
                if joined.len() >= 3 {
                    let (x, y): (Vec<f64>, Vec<f64>) = joined.into_iter().unzip();
                    let r = pearson(&x, &y)?;
                    println!("perplexity vs accuracy: Pearson r = {r:.4} over {} templates", x.len());
                    let corr = PerplexityCorrelation {
                        n: x.len(),
                        pearson_r: r,
                    };
                    std::fs::write(
                        run_dir.join("perplexity_correlation.json"),
                        serde_json::to_string_pretty(&corr)? + "\n",
                    )?;
                }
            }
            FeatureReport {
                groups: rows,
                comparison: None,
            }
        }
    };
    let csv_path = run_dir.join("report.csv");
    write_aggregates_csv(std::fs::File::create(&csv_path)?, &report)?;
    write_report_json(std::fs::File::create(run_dir.join("report.json"))?, &report)?;
    let chart_rows = if report.groups.len() > 12 {
        &report.groups[..12]
    } else {
        &report.groups[..]
    };
    let svg = svg_feature_bars(&format!("accuracy by {axis:?}").to_lowercase(), chart_rows)?;
    std::fs::write(charts.join(format!("accuracy_by_{axis:?}.svg").to_lowercase()), svg)?;
    println!("wrote {} and report.json + charts/", csv_path.display());
    Ok(())
}

pub fn numeric_report_cmd(run_dir: &Path) -> Result<()> {
    let scored = read_scored_jsonl(&run_dir.join("scored.jsonl"))
        .context("run `eval score` first: scored.jsonl is missing or unreadable")?;
    let report = numeric_report(&scored)?;
    let charts = run_dir.join("charts");
    std::fs::create_dir_all(&charts)?;
    write_numeric_csv(
        std::fs::File::create(run_dir.join("numeric_report.csv"))?,
        &report,
    )?;
    std::fs::write(
        run_dir.join("numeric_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    std::fs::write(
        charts.join("numeric_curves.svg"),
        svg_numeric_curves("accuracy by stated certainty", &report)?,
    )?;
    println!("overall ECE: {:.6}", report.ece_overall);
    for (template, ece) in &report.ece_per_template {
        println!("  {template:<24} ECE {ece:.6}");
    }
    println!("wrote numeric_report.csv/json + charts/numeric_curves.svg in {}", run_dir.display());
    Ok(())
}
