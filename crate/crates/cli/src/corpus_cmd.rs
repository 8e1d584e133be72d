//! `corpus` subcommand implementations: pattern counting, percentage
//! histograms, and match sampling over JSONL corpora.

use anyhow::{Context, Result};
use epiprobe_core::corpus::{
    count_jsonl_path, normalize_rates, pct_histogram_jsonl_path, sample_matches, stream_path,
    PatternMatcher, Section, SectionExtractor,
};
use epiprobe_core::report::{svg_histogram, write_corpus_csv, write_histogram_csv};
use std::path::Path;

/// How documents are mapped to question/answer sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExtractMode {
    /// Split the text field on lines starting with "Q:" / "A:".
    QaSplit,
    /// Read the section from a second field ("question"/"answer").
    Field,
    /// Treat the whole text field as one post in the `other` section.
    Whole,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ExtractArgs {
    /// JSON field holding the document text.
    #[arg(long, default_value = "text")]
    pub text_field: String,
    /// JSON field holding the section label (with --mode field).
    #[arg(long, default_value = "section")]
    pub section_field: String,
    #[arg(long, value_enum, default_value_t = ExtractMode::QaSplit)]
    pub mode: ExtractMode,
}

impl ExtractArgs {
    pub fn extractor(&self) -> SectionExtractor {
        match self.mode {
            ExtractMode::QaSplit => SectionExtractor::QaSplit {
                text_field: self.text_field.clone(),
            },
            ExtractMode::Field => SectionExtractor::Field {
                text_field: self.text_field.clone(),
                section_field: self.section_field.clone(),
            },
            ExtractMode::Whole => SectionExtractor::Whole {
                text_field: self.text_field.clone(),
                section: Section::Other,
            },
        }
    }
}

fn load_patterns(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading patterns {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn corpus_count(
    input: &Path,
    patterns_path: &Path,
    extract: &ExtractArgs,
    out: Option<&Path>,
) -> Result<()> {
    let patterns = load_patterns(patterns_path)?;
    let matcher = PatternMatcher::new(&patterns)?;
    let report = count_jsonl_path(input, extract.extractor(), &matcher)?;
    if report.skipped_docs > 0 {
        log::warn!("skipped {} undecodable documents", report.skipped_docs);
    }
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_corpus_csv(std::fs::File::create(dir.join("corpus_report.csv"))?, &report)?;
            std::fs::write(
                dir.join("corpus_report.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            println!("wrote corpus_report.csv/json in {}", dir.display());
        }
        None => {
            write_corpus_csv(std::io::stdout().lock(), &report)?;
        }
    }
    for row in normalize_rates(&report)? {
        log::info!(
            "{} [{}]: {} instances, {:.3}/1k posts, {:.3}/1M words",
            row.pattern,
            row.section,
            row.instances,
            row.per_thousand_posts,
            row.per_million_words
        );
    }
    Ok(())
}

pub fn corpus_pct_hist(
    input: &Path,
    extract: &ExtractArgs,
    css_filter: bool,
    out: Option<&Path>,
) -> Result<()> {
    let hist = pct_histogram_jsonl_path(input, extract.extractor(), css_filter)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("charts"))?;
            write_histogram_csv(std::fs::File::create(dir.join("histogram.csv"))?, &hist)?;
            std::fs::write(
                dir.join("charts").join("pct_histogram.svg"),
                svg_histogram("stated percentages", &hist)?,
            )?;
            println!(
                "histogram over {} stated percentages ({} out of range) -> {}",
                hist.total(),
                hist.out_of_range,
                dir.display()
            );
        }
        None => {
            write_histogram_csv(std::io::stdout().lock(), &hist)?;
        }
    }
    Ok(())
}

pub fn corpus_sample(
    input: &Path,
    pattern: &str,
    n: usize,
    context_chars: usize,
    seed: u64,
    extract: &ExtractArgs,
    out: Option<&Path>,
) -> Result<()> {
    let mut docs = Vec::new();
    for item in stream_path(input, extract.extractor())? {
        if let Some(batch) = item? {
            docs.extend(batch);
        }
    }
    let samples = sample_matches(docs, pattern, n, context_chars, seed)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut text = String::new();
            for s in &samples {
                text.push_str(&serde_json::to_string(s)?);
                text.push('\n');
            }
            let path = dir.join("samples.jsonl");
            std::fs::write(&path, text)?;
            println!("wrote {} samples to {}", samples.len(), path.display());
        }
        None => {
            for s in &samples {
                println!("[{}]\t…{}…", s.section.label(), s.excerpt.replace('\n', " "));
            }
        }
    }
    Ok(())
}
