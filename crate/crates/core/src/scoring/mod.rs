//! Completion scoring and feature-level aggregation.
//!
//! Per-record metrics: correctness under answer normalization and alias
//! matching, probability mass on the gold answer, entropy of the non-top
//! alternatives, and template perplexity via echo scoring. Group-level:
//! accuracy with bootstrap CIs, Welch t-tests between feature classes, and
//! calibration error for stated-percentage prompts.

pub mod stats;

use crate::backend::{Backend, Completion, TokenStep};
use crate::exec;
use crate::probe::ProbeRecord;
use crate::qa::QAItem;
use crate::typology::{FeaturePredicate, LinguisticFeatures, MarkerTemplate};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub use stats::{
    bootstrap_ci, bootstrap_ci_seq, bootstrap_diff_ci, ece, mean, pearson, sample_variance,
    welch_t_test, StatsError, WelchResult,
};
#[cfg(feature = "parallel")]
pub use stats::bootstrap_ci_par;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("no gold answers known for item '{0}'")]
    UnknownItem(String),
    #[error("step has {0} alternatives; entropy needs at least 2")]
    NotEnoughAlternatives(usize),
    #[error("template '{0}' scored zero tokens")]
    EmptyTemplateScore(String),
    #[error("backend returned a token without a log-probability")]
    MissingLogprob,
    #[error("group '{0}' is empty")]
    EmptyGroup(String),
    #[error("result for item '{0}' has no stated percentage")]
    MissingStatedPct(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Knobs for correctness matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringOptions {
    /// Only the first this-many steps are searched for the answer.
    pub max_steps: usize,
    /// When on, a span match is rejected if a negation token precedes it
    /// ("The answer is not Paris"). Off by default: the plain token-match
    /// rule knowingly over-credits such completions, and the default keeps
    /// that behaviour so results stay comparable.
    pub negation_guard: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            max_steps: 10,
            negation_guard: false,
        }
    }
}

/// Canonical answer form: lowercase, outer whitespace/punctuation stripped,
/// inner whitespace collapsed, leading article dropped.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    let collapsed: Vec<&str> = trimmed.split_whitespace().collect();
    let words = match collapsed.as_slice() {
        [first, rest @ ..] if rest.len() >= 1 && ["a", "an", "the"].contains(first) => rest,
        all => all,
    };
    words.join(" ")
}

fn normalized_alias_set(gold_aliases: &[String]) -> BTreeSet<String> {
    gold_aliases
        .iter()
        .map(|a| normalize_answer(a))
        .filter(|a| !a.is_empty())
        .collect()
}

const NEGATION_TOKENS: [&str; 12] = [
    "not", "never", "no", "isn't", "aren't", "wasn't", "weren't", "don't", "doesn't", "didn't",
    "can't", "cannot",
];

/// Does any contiguous detokenized span of the first `max_steps` tokens
/// normalize to a gold alias? Returns the earliest matching span start.
pub fn is_correct(
    completion: &Completion,
    gold_aliases: &[String],
    options: &ScoringOptions,
) -> (bool, Option<usize>) {
    let aliases = normalized_alias_set(gold_aliases);
    if aliases.is_empty() {
        return (false, None);
    }
    let steps: Vec<&str> = completion
        .steps
        .iter()
        .take(options.max_steps)
        .map(|s| s.token.as_str())
        .collect();
    for start in 0..steps.len() {
        if options.negation_guard {
            let negated = steps[..start]
                .iter()
                .any(|t| NEGATION_TOKENS.contains(&normalize_answer(t).as_str()));
            if negated {
                continue;
            }
        }
        for end in start + 1..=steps.len() {
            let span = steps[start..end].concat();
            if aliases.contains(&normalize_answer(&span)) {
                return (true, Some(start));
            }
        }
    }
    (false, None)
}

/// The step index where probability and entropy are read: the matched answer
/// step when there is one, else the first step whose alternatives mention
/// any alias, else step 0.
fn evaluation_position(
    completion: &Completion,
    aliases: &BTreeSet<String>,
    answer_position: Option<usize>,
    max_steps: usize,
) -> usize {
    if let Some(pos) = answer_position {
        return pos;
    }
    completion
        .steps
        .iter()
        .take(max_steps)
        .position(|step| {
            step.alternatives
                .keys()
                .any(|tok| aliases.contains(&normalize_answer(tok)))
        })
        .unwrap_or(0)
}

/// Total probability mass the model put on gold aliases at the evaluation
/// step. `None` when that step reports no alternatives at all — absence of
/// evidence is not a zero score.
pub fn probability_on_gold(
    completion: &Completion,
    gold_aliases: &[String],
    answer_position: Option<usize>,
    options: &ScoringOptions,
) -> Option<f64> {
    let aliases = normalized_alias_set(gold_aliases);
    if completion.steps.is_empty() || aliases.is_empty() {
        return None;
    }
    let pos = evaluation_position(completion, &aliases, answer_position, options.max_steps);
    let step = completion.steps.get(pos)?;
    if step.alternatives.is_empty() {
        return None;
    }
    Some(
        step.alternatives
            .iter()
            .filter(|(tok, _)| aliases.contains(&normalize_answer(tok)))
            .map(|(_, lp)| lp.exp())
            .sum(),
    )
}

/// Shannon entropy (nats) of the alternatives after removing the single
/// most probable one and renormalizing the rest.
pub fn alt_entropy(step: &TokenStep) -> Result<f64, ScoringError> {
    if step.alternatives.len() < 2 {
        return Err(ScoringError::NotEnoughAlternatives(step.alternatives.len()));
    }
    let mut probs: Vec<f64> = step.alternatives.values().map(|lp| lp.exp()).collect();
    let top = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
        .map(|(i, _)| i)
        .expect("nonempty alternatives");
    probs.swap_remove(top);
    let total: f64 = probs.iter().sum();
    Ok(probs
        .iter()
        .map(|p| p / total)
        .filter(|p| *p > 0.0)
        .map(|p| -p * p.ln())
        .sum())
}

/// Perplexity of a marker surface given a carrier prompt, via echo scoring:
/// exp(−mean per-token logprob).
pub fn template_perplexity(
    template: &MarkerTemplate,
    carrier_prompt: &str,
    backend: &dyn Backend,
) -> Result<f64, ScoringError> {
    let continuation = format!(" {}", template.surface);
    let steps = backend.score_text(carrier_prompt, &continuation)?;
    if steps.is_empty() {
        return Err(ScoringError::EmptyTemplateScore(template.id.clone()));
    }
    let mut total = 0.0;
    for step in &steps {
        total += step.logprob.ok_or(ScoringError::MissingLogprob)?;
    }
    Ok((-total / steps.len() as f64).exp())
}

/// One scored probe record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResult {
    pub item_id: String,
    pub template_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stated_pct: Option<u8>,
    /// True when the backend call failed and no completion exists.
    pub failed: bool,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_position: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob_on_gold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alt_entropy: Option<f64>,
}

/// Score one record against its item's gold aliases.
pub fn score_record(
    record: &ProbeRecord,
    gold_aliases: &[String],
    options: &ScoringOptions,
) -> ScoredResult {
    let mut result = ScoredResult {
        item_id: record.item_id.clone(),
        template_id: record.template_id.clone(),
        stated_pct: record.stated_pct,
        failed: record.completion.is_none(),
        correct: false,
        answer_position: None,
        prob_on_gold: None,
        alt_entropy: None,
    };
    let Some(completion) = &record.completion else {
        return result;
    };
    let (correct, position) = is_correct(completion, gold_aliases, options);
    result.correct = correct;
    result.answer_position = position;
    result.prob_on_gold = probability_on_gold(completion, gold_aliases, position, options);
    let aliases = normalized_alias_set(gold_aliases);
    let eval_pos = evaluation_position(completion, &aliases, position, options.max_steps);
    result.alt_entropy = completion
        .steps
        .get(eval_pos)
        .and_then(|step| alt_entropy(step).ok());
    result
}

fn gold_map(items: &[QAItem]) -> HashMap<&str, &[String]> {
    items
        .iter()
        .map(|i| (i.id.as_str(), i.gold_aliases.as_slice()))
        .collect()
}

/// Score a batch sequentially.
pub fn score_records_seq(
    records: &[ProbeRecord],
    items: &[QAItem],
    options: &ScoringOptions,
) -> Result<Vec<ScoredResult>, ScoringError> {
    let gold = gold_map(items);
    records
        .iter()
        .map(|r| {
            let aliases = gold
                .get(r.item_id.as_str())
                .ok_or_else(|| ScoringError::UnknownItem(r.item_id.clone()))?;
            Ok(score_record(r, aliases, options))
        })
        .collect()
}

/// Score a batch with the build's default strategy (rayon when enabled).
pub fn score_records(
    records: &[ProbeRecord],
    items: &[QAItem],
    options: &ScoringOptions,
) -> Result<Vec<ScoredResult>, ScoringError> {
    let gold = gold_map(items);
    let scored = exec::map_slice(records, |r| {
        gold.get(r.item_id.as_str())
            .map(|aliases| score_record(r, aliases, options))
            .ok_or_else(|| ScoringError::UnknownItem(r.item_id.clone()))
    });
    scored.into_iter().collect()
}

/// Rayon-parallel batch scoring (identical output to the sequential path).
#[cfg(feature = "parallel")]
pub fn score_records_par(
    records: &[ProbeRecord],
    items: &[QAItem],
    options: &ScoringOptions,
) -> Result<Vec<ScoredResult>, ScoringError> {
    let gold = gold_map(items);
    let scored = exec::map_slice_par(records, |r| {
        gold.get(r.item_id.as_str())
            .map(|aliases| score_record(r, aliases, options))
            .ok_or_else(|| ScoringError::UnknownItem(r.item_id.clone()))
    });
    scored.into_iter().collect()
}

/// Accuracy and mean metrics for one group of results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAggregate {
    pub group: String,
    pub n: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean probability-on-gold over every result that has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_prob_on_gold: Option<f64>,
    /// Mean probability-on-gold restricted to correctly answered results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_prob_on_gold_correct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_alt_entropy: Option<f64>,
}

/// Two groups side by side with the test statistics between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureComparison {
    pub a: FeatureAggregate,
    pub b: FeatureAggregate,
    pub t: f64,
    pub p_value: f64,
    /// Bootstrap CI of accuracy(a) − accuracy(b).
    pub diff_ci_low: f64,
    pub diff_ci_high: f64,
}

/// A labelled feature-predicate group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub predicate: FeaturePredicate,
}

fn optional_mean(values: Vec<f64>) -> Option<f64> {
    (!values.is_empty()).then(|| mean(&values))
}

/// Aggregate one group: exact accuracy plus a bootstrap percentile CI.
/// Failed records are excluded.
pub fn aggregate_group(
    label: &str,
    results: &[&ScoredResult],
    n_resamples: usize,
    seed: u64,
) -> Result<FeatureAggregate, ScoringError> {
    let usable: Vec<&&ScoredResult> = results.iter().filter(|r| !r.failed).collect();
    if usable.is_empty() {
        return Err(ScoringError::EmptyGroup(label.to_string()));
    }
    let correct01: Vec<f64> = usable
        .iter()
        .map(|r| if r.correct { 1.0 } else { 0.0 })
        .collect();
    let accuracy = correct01.iter().sum::<f64>() / correct01.len() as f64;
    let (ci_low, ci_high) = bootstrap_ci(&correct01, n_resamples, 0.95, seed)?;
    Ok(FeatureAggregate {
        group: label.to_string(),
        n: usable.len(),
        accuracy,
        ci_low,
        ci_high,
        mean_prob_on_gold: optional_mean(
            usable.iter().filter_map(|r| r.prob_on_gold).collect(),
        ),
        mean_prob_on_gold_correct: optional_mean(
            usable
                .iter()
                .filter(|r| r.correct)
                .filter_map(|r| r.prob_on_gold)
                .collect(),
        ),
        mean_alt_entropy: optional_mean(
            usable.iter().filter_map(|r| r.alt_entropy).collect(),
        ),
    })
}

/// Compare two feature-predicate groups: per-group aggregates, Welch t-test
/// on correctness, and a bootstrap CI on the accuracy gap. `features_of`
/// maps a template id to its coding (registry lookup, typically).
pub fn aggregate_by_feature(
    results: &[ScoredResult],
    features_of: &dyn Fn(&str) -> Option<LinguisticFeatures>,
    group_a: &GroupSpec,
    group_b: &GroupSpec,
    n_resamples: usize,
    seed: u64,
) -> Result<FeatureComparison, ScoringError> {
    let select = |spec: &GroupSpec| -> Vec<&ScoredResult> {
        results
            .iter()
            .filter(|r| {
                features_of(&r.template_id)
                    .map(|f| spec.predicate.matches(&f))
                    .unwrap_or(false)
            })
            .collect()
    };
    let in_a = select(group_a);
    let in_b = select(group_b);
    let a = aggregate_group(&group_a.label, &in_a, n_resamples, seed)?;
    let b = aggregate_group(&group_b.label, &in_b, n_resamples, seed.wrapping_add(1))?;
    let to01 = |rs: &[&ScoredResult]| -> Vec<f64> {
        rs.iter()
            .filter(|r| !r.failed)
            .map(|r| if r.correct { 1.0 } else { 0.0 })
            .collect()
    };
    let a01 = to01(&in_a);
    let b01 = to01(&in_b);
    let welch = welch_t_test(&a01, &b01)?;
    let (diff_ci_low, diff_ci_high) =
        stats::bootstrap_diff_ci(&a01, &b01, n_resamples, 0.95, seed.wrapping_add(2))?;
    Ok(FeatureComparison {
        a,
        b,
        t: welch.t,
        p_value: welch.p,
        diff_ci_low,
        diff_ci_high,
    })
}

/// Calibration error over results that carry stated percentages.
pub fn ece_of_results(results: &[ScoredResult]) -> Result<f64, ScoringError> {
    let mut outcomes = Vec::with_capacity(results.len());
    for r in results.iter().filter(|r| !r.failed) {
        let pct = r
            .stated_pct
            .ok_or_else(|| ScoringError::MissingStatedPct(r.item_id.clone()))?;
        outcomes.push((pct, r.correct));
    }
    Ok(ece(&outcomes)?)
}

/// One scored result per line.
pub fn write_scored_jsonl(path: &Path, results: &[ScoredResult]) -> Result<(), ScoringError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for result in results {
        serde_json::to_writer(&mut file, result)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_scored_jsonl(path: &Path) -> Result<Vec<ScoredResult>, ScoringError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut results = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        results.push(serde_json::from_str(&line)?);
    }
    Ok(results)
}
