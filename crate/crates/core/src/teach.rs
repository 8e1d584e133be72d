//! In-context calibration teaching.
//!
//! Builds few-shot sets whose examples carry an epistemic marker exactly
//! when the model's confidence on that example sat on one side of a
//! threshold, renders them into prompts (marker as answer prefix or
//! suffix, examples ordered by confidence or shuffled), and evaluates
//! whether a model taught this way emits the marker in accordance with
//! its own confidence (macro-F1, plus accuracy/entropy conditioned on
//! emission).

use crate::corpus::normalize_for_match;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Certainty,
    Uncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Prefix,
    Suffix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    Ascending,
    Descending,
    Random,
}

/// A marker with both rendering forms: suffix ("Paris. I think.") and
/// prefix ("I think it's Paris.").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeachMarker {
    pub id: String,
    pub direction: Direction,
    pub suffix_form: String,
    pub prefix_form: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TeachError {
    #[error("threshold must be in (0,1), got {0}")]
    BadThreshold(f64),
    #[error("bucket count must be ≥ 1")]
    NoBuckets,
    #[error("pool target {target} cannot be met: deficient buckets {buckets:?}")]
    DeficientBuckets { buckets: Vec<String>, target: usize },
    #[error("no examples to render")]
    NoExamples,
    #[error("no records to evaluate")]
    NoRecords,
    #[error("prob_on_gold {0} outside [0,1]")]
    BadProb(f64),
    #[error("marker fixture: {0}")]
    Fixture(String),
    #[error("unknown teach marker id {0:?}")]
    UnknownMarker(String),
}

/// Teaching-run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachConfig {
    pub direction: Direction,
    /// Confidence threshold in (0,1); ties get no marker.
    pub threshold: f64,
    pub placement: Placement,
    pub ordering: Ordering,
    pub marker: TeachMarker,
}

impl TeachConfig {
    pub fn validate(&self) -> Result<(), TeachError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(TeachError::BadThreshold(self.threshold));
        }
        Ok(())
    }
}

/// A scored QA example available for pool construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCandidate {
    pub question: String,
    pub answer: String,
    /// Probability mass the model put on the gold answer, in [0,1].
    pub prob_on_gold: f64,
}

/// One member of a few-shot teaching set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    pub answer: String,
    pub prob_on_gold: f64,
    pub marker_attached: bool,
    pub placement: Placement,
}

fn bucket_of(p: f64, buckets: usize) -> usize {
    ((p * buckets as f64).floor() as usize).min(buckets - 1)
}

/// Quota per bucket: every bucket gets ⌊total/buckets⌋; the remainder is
/// handed out alternating from the two ends (bucket 0, last, 1,
/// second-to-last, …) so a threshold at the bucket midline still splits
/// the pool within ±1.
fn bucket_quotas(buckets: usize, total: usize) -> Vec<usize> {
    let mut quotas = vec![total / buckets; buckets];
    let mut lo = 0usize;
    let mut hi = buckets - 1;
    for k in 0..total % buckets {
        if k % 2 == 0 {
            quotas[lo] += 1;
            lo += 1;
        } else {
            quotas[hi] += 1;
            hi -= 1;
        }
    }
    quotas
}

/// Select `total` examples whose `prob_on_gold` is uniformly spread over
/// `buckets` equal confidence bins ([0,0.1), …, [0.9,1.0] for 10 buckets).
///
/// Bucket counts differ by at most 1 (see [`bucket_quotas`]); candidates
/// are taken in input order within a bucket. Errors name every bucket that
/// cannot meet its quota.
pub fn build_fewshot_pool(
    candidates: &[PoolCandidate],
    buckets: usize,
    total: usize,
) -> Result<Vec<FewShotExample>, TeachError> {
    if buckets == 0 {
        return Err(TeachError::NoBuckets);
    }
    for c in candidates {
        if !(0.0..=1.0).contains(&c.prob_on_gold) || c.prob_on_gold.is_nan() {
            return Err(TeachError::BadProb(c.prob_on_gold));
        }
    }
    let mut by_bucket: Vec<Vec<&PoolCandidate>> = vec![Vec::new(); buckets];
    for c in candidates {
        by_bucket[bucket_of(c.prob_on_gold, buckets)].push(c);
    }
    let quotas = bucket_quotas(buckets, total);
    let deficient: Vec<String> = (0..buckets)
        .filter(|&b| by_bucket[b].len() < quotas[b])
        .map(|b| {
            format!(
                "[{:.1},{:.1}{}: have {}, need {}",
                b as f64 / buckets as f64,
                (b + 1) as f64 / buckets as f64,
                if b + 1 == buckets { "]" } else { ")" },
                by_bucket[b].len(),
                quotas[b]
            )
        })
        .collect();
    if !deficient.is_empty() {
        return Err(TeachError::DeficientBuckets {
            buckets: deficient,
            target: total,
        });
    }
    let mut pool = Vec::with_capacity(total);
    for (b, bucket) in by_bucket.iter().enumerate() {
        for c in bucket.iter().take(quotas[b]) {
            pool.push(FewShotExample {
                question: c.question.clone(),
                answer: c.answer.clone(),
                prob_on_gold: c.prob_on_gold,
                marker_attached: false,
                placement: Placement::Suffix,
            });
        }
    }
    Ok(pool)
}

/// Set `marker_attached` per the threshold rule: certainty markers go on
/// examples with prob_on_gold strictly above the threshold, uncertainty
/// markers strictly below; ties stay unmarked. Placement is copied from
/// the config.
pub fn attach_markers(
    examples: &mut [FewShotExample],
    config: &TeachConfig,
) -> Result<(), TeachError> {
    config.validate()?;
    for ex in examples.iter_mut() {
        ex.marker_attached = match config.direction {
            Direction::Certainty => ex.prob_on_gold > config.threshold,
            Direction::Uncertainty => ex.prob_on_gold < config.threshold,
        };
        ex.placement = config.placement;
    }
    Ok(())
}

fn render_answer_line(ex: &FewShotExample, marker: &TeachMarker) -> String {
    if !ex.marker_attached {
        return format!("A: {}.", ex.answer);
    }
    match ex.placement {
        Placement::Prefix => format!("A: {} {}.", marker.prefix_form, ex.answer),
        Placement::Suffix => format!("A: {}. {}", ex.answer, marker.suffix_form),
    }
}

/// Order examples per the config and render the few-shot prompt ending in
/// the query's open "A:". Ascending sorts stably by prob_on_gold,
/// descending is exactly its reverse, random is a seeded shuffle.
pub fn render_fewshot_prompt(
    examples: &[FewShotExample],
    config: &TeachConfig,
    query_question: &str,
    seed: u64,
) -> Result<String, TeachError> {
    if examples.is_empty() {
        return Err(TeachError::NoExamples);
    }
    config.validate()?;
    let mut ordered: Vec<&FewShotExample> = examples.iter().collect();
    match config.ordering {
        Ordering::Ascending => {
            ordered.sort_by(|a, b| a.prob_on_gold.total_cmp(&b.prob_on_gold));
        }
        Ordering::Descending => {
            ordered.sort_by(|a, b| a.prob_on_gold.total_cmp(&b.prob_on_gold));
            ordered.reverse();
        }
        Ordering::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ordered.shuffle(&mut rng);
        }
    }
    let mut out = String::new();
    for ex in ordered {
        out.push_str(&format!(
            "Q: {}\n{}\n\n",
            ex.question.trim_end(),
            render_answer_line(ex, &config.marker)
        ));
    }
    out.push_str(&format!("Q: {}\nA:", query_question.trim_end()));
    Ok(out)
}

/// Does the generated text contain the marker surface? Case-insensitive
/// substring with curly-apostrophe folding.
pub fn detect_emission(generated: &str, marker_surface: &str) -> bool {
    normalize_for_match(generated).contains(&normalize_for_match(marker_surface))
}

/// One test-time generation, labeled for emission evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    /// Marker surface appeared in the generation.
    pub emitted: bool,
    /// Probability of the generated top token.
    pub top_token_prob: f64,
    /// Probability on the gold answer, when known.
    pub prob_on_gold: Option<f64>,
    pub correct: bool,
    pub alt_entropy: Option<f64>,
}

/// Emission-calibration evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionEval {
    /// Macro-F1 of emitted? against the top-token-probability gold label.
    pub macro_f1_top_token: f64,
    /// Same, labeled by prob-on-gold (None when any record lacks it).
    pub macro_f1_prob_on_gold: Option<f64>,
    pub accuracy_given_emission: Option<f64>,
    pub accuracy_given_no_emission: Option<f64>,
    pub entropy_given_emission: Option<f64>,
    pub entropy_given_no_emission: Option<f64>,
    pub n: usize,
}

/// Macro-F1 over the two classes (emit / no-emit). Empty predicted class →
/// precision 0; empty gold class → recall 0; class F1 = 0 when P+R = 0.
fn macro_f1(pairs: &[(bool, bool)]) -> f64 {
    let f1_for = |class: bool| {
        let tp = pairs.iter().filter(|(p, g)| *p == class && *g == class).count() as f64;
        let pred = pairs.iter().filter(|(p, _)| *p == class).count() as f64;
        let gold = pairs.iter().filter(|(_, g)| *g == class).count() as f64;
        let precision = if pred == 0.0 { 0.0 } else { tp / pred };
        let recall = if gold == 0.0 { 0.0 } else { tp / gold };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    };
    (f1_for(true) + f1_for(false)) / 2.0
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Score emissions against the threshold rule. The gold label for a record
/// is "the marker should appear": confidence strictly above the threshold
/// for certainty markers, strictly below for uncertainty. Reported twice,
/// labeling confidence by top-token probability and (when available) by
/// probability-on-gold.
pub fn evaluate_emission(
    records: &[EmissionRecord],
    config: &TeachConfig,
) -> Result<EmissionEval, TeachError> {
    if records.is_empty() {
        return Err(TeachError::NoRecords);
    }
    config.validate()?;
    let should_emit = |p: f64| match config.direction {
        Direction::Certainty => p > config.threshold,
        Direction::Uncertainty => p < config.threshold,
    };
    let top_pairs: Vec<(bool, bool)> = records
        .iter()
        .map(|r| (r.emitted, should_emit(r.top_token_prob)))
        .collect();
    let gold_pairs: Option<Vec<(bool, bool)>> = records
        .iter()
        .map(|r| r.prob_on_gold.map(|p| (r.emitted, should_emit(p))))
        .collect();
    Ok(EmissionEval {
        macro_f1_top_token: macro_f1(&top_pairs),
        macro_f1_prob_on_gold: gold_pairs.as_deref().map(macro_f1),
        accuracy_given_emission: mean_of(
            records
                .iter()
                .filter(|r| r.emitted)
                .map(|r| f64::from(u8::from(r.correct))),
        ),
        accuracy_given_no_emission: mean_of(
            records
                .iter()
                .filter(|r| !r.emitted)
                .map(|r| f64::from(u8::from(r.correct))),
        ),
        entropy_given_emission: mean_of(
            records
                .iter()
                .filter(|r| r.emitted)
                .filter_map(|r| r.alt_entropy),
        ),
        entropy_given_no_emission: mean_of(
            records
                .iter()
                .filter(|r| !r.emitted)
                .filter_map(|r| r.alt_entropy),
        ),
        n: records.len(),
    })
}

/// Parse the TSV marker-pair fixture (id, direction, suffix, prefix).
pub fn parse_teach_markers(tsv: &str) -> Result<Vec<TeachMarker>, TeachError> {
    let mut markers = Vec::new();
    for (lineno, line) in tsv.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(TeachError::Fixture(format!(
                "line {}: expected 4 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let direction = match fields[1] {
            "certainty" => Direction::Certainty,
            "uncertainty" => Direction::Uncertainty,
            other => {
                return Err(TeachError::Fixture(format!(
                    "line {}: unknown direction {other:?}",
                    lineno + 1
                )))
            }
        };
        markers.push(TeachMarker {
            id: fields[0].to_string(),
            direction,
            suffix_form: fields[2].to_string(),
            prefix_form: fields[3].to_string(),
        });
    }
    if markers.is_empty() {
        return Err(TeachError::Fixture("no data rows".to_string()));
    }
    Ok(markers)
}

/// Built-in marker pairs (5 certainty, 5 uncertainty).
pub fn builtin_teach_markers() -> Vec<TeachMarker> {
    parse_teach_markers(include_str!("../fixtures/teach_pairs.tsv"))
        .expect("built-in teach markers parse")
}

/// Look up a built-in teach marker by id.
pub fn teach_marker(id: &str) -> Result<TeachMarker, TeachError> {
    builtin_teach_markers()
        .into_iter()
        .find(|m| m.id == id)
        .ok_or_else(|| TeachError::UnknownMarker(id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate(i: usize, p: f64) -> PoolCandidate {
        PoolCandidate {
            question: format!("What is item {i}?"),
            answer: format!("ans{i}"),
            prob_on_gold: p,
        }
    }

    fn config(direction: Direction, placement: Placement, ordering: Ordering) -> TeachConfig {
        TeachConfig {
            direction,
            threshold: 0.5,
            placement,
            ordering,
            marker: teach_marker("i_think").unwrap(),
        }
    }

    /// 6 candidates per decile at varied offsets.
    fn rich_pool() -> Vec<PoolCandidate> {
        let mut out = Vec::new();
        let mut i = 0;
        for b in 0..10 {
            for k in 0..6 {
                let p = (b as f64 + [0.05, 0.3, 0.55, 0.7, 0.9, 0.99][k]) / 10.0;
                out.push(candidate(i, p));
                i += 1;
            }
        }
        out
    }

    #[test]
    fn pool_of_48_spreads_evenly() {
        let pool = build_fewshot_pool(&rich_pool(), 10, 48).unwrap();
        assert_eq!(pool.len(), 48);
        let mut counts = [0usize; 10];
        for ex in &pool {
            counts[bucket_of(ex.prob_on_gold, 10)] += 1;
        }
        assert_eq!(counts.iter().max().unwrap() - counts.iter().min().unwrap(), 1);
        // 48 = 10×4 + 8 extras alternating from the ends: deciles 4 and 5
        // stay at 4, everything else gets 5.
        assert_eq!(counts, [5, 5, 5, 5, 4, 4, 5, 5, 5, 5]);
    }

    #[test]
    fn pool_missing_decile_errors() {
        let candidates: Vec<PoolCandidate> = rich_pool()
            .into_iter()
            .filter(|c| c.prob_on_gold < 0.9)
            .collect();
        let err = build_fewshot_pool(&candidates, 10, 48).unwrap_err();
        match err {
            TeachError::DeficientBuckets { buckets, target } => {
                assert_eq!(target, 48);
                assert_eq!(buckets.len(), 1);
                assert!(buckets[0].starts_with("[0.9,1.0]"), "{}", buckets[0]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn pool_target_ten_takes_one_per_bucket() {
        let pool = build_fewshot_pool(&rich_pool(), 10, 10).unwrap();
        assert_eq!(pool.len(), 10);
        let mut counts = [0usize; 10];
        for ex in &pool {
            counts[bucket_of(ex.prob_on_gold, 10)] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn boundary_prob_one_lands_in_top_bucket() {
        assert_eq!(bucket_of(1.0, 10), 9);
        assert_eq!(bucket_of(0.0, 10), 0);
        assert_eq!(bucket_of(0.1, 10), 1);
    }

    #[test]
    fn attach_follows_direction_and_ties_unmarked() {
        let mut examples = vec![
            FewShotExample {
                question: "q1".into(),
                answer: "a1".into(),
                prob_on_gold: 0.6,
                marker_attached: false,
                placement: Placement::Suffix,
            },
            FewShotExample {
                question: "q2".into(),
                answer: "a2".into(),
                prob_on_gold: 0.4,
                marker_attached: false,
                placement: Placement::Suffix,
            },
            FewShotExample {
                question: "q3".into(),
                answer: "a3".into(),
                prob_on_gold: 0.5,
                marker_attached: true,
                placement: Placement::Suffix,
            },
        ];
        let cfg = config(Direction::Certainty, Placement::Prefix, Ordering::Ascending);
        attach_markers(&mut examples, &cfg).unwrap();
        assert_eq!(
            examples.iter().map(|e| e.marker_attached).collect::<Vec<_>>(),
            vec![true, false, false]
        );
        assert!(examples.iter().all(|e| e.placement == Placement::Prefix));

        let cfg = config(Direction::Uncertainty, Placement::Suffix, Ordering::Ascending);
        attach_markers(&mut examples, &cfg).unwrap();
        assert_eq!(
            examples.iter().map(|e| e.marker_attached).collect::<Vec<_>>(),
            vec![false, true, false]
        );
    }

    #[test]
    fn balanced_marking_at_half_threshold() {
        let mut pool = build_fewshot_pool(&rich_pool(), 10, 48).unwrap();
        let cfg = config(Direction::Certainty, Placement::Suffix, Ordering::Ascending);
        attach_markers(&mut pool, &cfg).unwrap();
        let marked = pool.iter().filter(|e| e.marker_attached).count();
        let unmarked = pool.len() - marked;
        assert!(
            marked.abs_diff(unmarked) <= 1,
            "marked {marked} unmarked {unmarked}"
        );
    }

    #[test]
    fn render_forms_match_placement() {
        let ex = FewShotExample {
            question: "What is the capital of France?".into(),
            answer: "Paris".into(),
            prob_on_gold: 0.3,
            marker_attached: true,
            placement: Placement::Suffix,
        };
        let marker = teach_marker("i_think").unwrap();
        assert_eq!(render_answer_line(&ex, &marker), "A: Paris. I think.");
        let mut prefix_ex = ex.clone();
        prefix_ex.placement = Placement::Prefix;
        assert_eq!(
            render_answer_line(&prefix_ex, &marker),
            "A: I think it's Paris."
        );
        let mut plain = ex;
        plain.marker_attached = false;
        assert_eq!(render_answer_line(&plain, &marker), "A: Paris.");
    }

    #[test]
    fn render_orders_and_ends_open() {
        let mut pool = build_fewshot_pool(&rich_pool(), 10, 10).unwrap();
        let cfg = config(Direction::Uncertainty, Placement::Prefix, Ordering::Ascending);
        attach_markers(&mut pool, &cfg).unwrap();
        let text = render_fewshot_prompt(&pool, &cfg, "What is the capital of France?", 1).unwrap();
        assert!(text.ends_with("Q: What is the capital of France?\nA:"));
        // ascending: the least-confident example is rendered first
        let first_block = text.split("\n\n").next().unwrap();
        let lowest = pool
            .iter()
            .min_by(|a, b| a.prob_on_gold.total_cmp(&b.prob_on_gold))
            .unwrap();
        assert!(first_block.contains(&lowest.question));

        let mut desc_cfg = cfg.clone();
        desc_cfg.ordering = Ordering::Descending;
        let desc = render_fewshot_prompt(&pool, &desc_cfg, "What is the capital of France?", 1)
            .unwrap();
        let asc_blocks: Vec<&str> = text.strip_suffix("Q: What is the capital of France?\nA:")
            .unwrap()
            .trim_end()
            .split("\n\n")
            .collect();
        let desc_blocks: Vec<&str> = desc
            .strip_suffix("Q: What is the capital of France?\nA:")
            .unwrap()
            .trim_end()
            .split("\n\n")
            .collect();
        let mut reversed = asc_blocks.clone();
        reversed.reverse();
        assert_eq!(desc_blocks, reversed);
    }

    #[test]
    fn random_ordering_is_seed_deterministic() {
        let pool = build_fewshot_pool(&rich_pool(), 10, 10).unwrap();
        let cfg = config(Direction::Certainty, Placement::Suffix, Ordering::Random);
        let a = render_fewshot_prompt(&pool, &cfg, "q?", 7).unwrap();
        let b = render_fewshot_prompt(&pool, &cfg, "q?", 7).unwrap();
        let c = render_fewshot_prompt(&pool, &cfg, "q?", 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn emission_detection_folds_case_and_apostrophes() {
        assert!(detect_emission("Paris. I THINK.", "I think"));
        assert!(detect_emission("I wouldn\u{2019}t put money on it", "I wouldn't put money"));
        assert!(!detect_emission("Paris.", "I think"));
    }

    #[test]
    fn perfect_rule_following_scores_one() {
        let cfg = config(Direction::Certainty, Placement::Suffix, Ordering::Ascending);
        let records: Vec<EmissionRecord> = (0..100)
            .map(|i| {
                let p = i as f64 / 99.0;
                EmissionRecord {
                    emitted: p > cfg.threshold,
                    top_token_prob: p,
                    prob_on_gold: Some(p),
                    correct: i % 2 == 0,
                    alt_entropy: Some(1.0 - p),
                }
            })
            .collect();
        let eval = evaluate_emission(&records, &cfg).unwrap();
        assert!((eval.macro_f1_top_token - 1.0).abs() < 1e-12);
        assert!((eval.macro_f1_prob_on_gold.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(eval.n, 100);
    }

    #[test]
    fn coin_flip_emissions_score_half() {
        use rand::Rng;
        let cfg = config(Direction::Certainty, Placement::Suffix, Ordering::Ascending);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let records: Vec<EmissionRecord> = (0..10_000)
            .map(|_| EmissionRecord {
                emitted: rng.random_bool(0.5),
                top_token_prob: if rng.random_bool(0.5) { 0.9 } else { 0.1 },
                prob_on_gold: None,
                correct: rng.random_bool(0.5),
                alt_entropy: None,
            })
            .collect();
        let eval = evaluate_emission(&records, &cfg).unwrap();
        assert!(
            (eval.macro_f1_top_token - 0.5).abs() < 0.05,
            "macro-F1 {}",
            eval.macro_f1_top_token
        );
        assert!(eval.macro_f1_prob_on_gold.is_none());
    }

    #[test]
    fn all_emit_degenerate_is_computable() {
        let cfg = config(Direction::Certainty, Placement::Suffix, Ordering::Ascending);
        let records: Vec<EmissionRecord> = [0.9, 0.8, 0.2]
            .iter()
            .map(|&p| EmissionRecord {
                emitted: true,
                top_token_prob: p,
                prob_on_gold: None,
                correct: true,
                alt_entropy: None,
            })
            .collect();
        let eval = evaluate_emission(&records, &cfg).unwrap();
        // emit class: P=2/3, R=1 → F1=0.8; no-emit class: P=0 (empty), R=0 → 0.
        assert!((eval.macro_f1_top_token - 0.4).abs() < 1e-12);
        assert_eq!(eval.accuracy_given_emission, Some(1.0));
        assert_eq!(eval.accuracy_given_no_emission, None);
    }

    #[test]
    fn conditional_means_split_by_emission() {
        let cfg = config(Direction::Certainty, Placement::Suffix, Ordering::Ascending);
        let records = vec![
            EmissionRecord {
                emitted: true,
                top_token_prob: 0.9,
                prob_on_gold: Some(0.9),
                correct: true,
                alt_entropy: Some(0.2),
            },
            EmissionRecord {
                emitted: true,
                top_token_prob: 0.8,
                prob_on_gold: Some(0.8),
                correct: false,
                alt_entropy: Some(0.4),
            },
            EmissionRecord {
                emitted: false,
                top_token_prob: 0.2,
                prob_on_gold: Some(0.2),
                correct: false,
                alt_entropy: Some(1.0),
            },
        ];
        let eval = evaluate_emission(&records, &cfg).unwrap();
        assert_eq!(eval.accuracy_given_emission, Some(0.5));
        assert_eq!(eval.accuracy_given_no_emission, Some(0.0));
        assert!((eval.entropy_given_emission.unwrap() - 0.3).abs() < 1e-12);
        assert!((eval.entropy_given_no_emission.unwrap() - 1.0).abs() < 1e-12);
        assert!((eval.macro_f1_top_token - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_permutation_invariant() {
        let cfg = config(Direction::Uncertainty, Placement::Suffix, Ordering::Ascending);
        let mut records: Vec<EmissionRecord> = (0..50)
            .map(|i| EmissionRecord {
                emitted: i % 3 == 0,
                top_token_prob: (i as f64) / 50.0,
                prob_on_gold: Some(1.0 - (i as f64) / 50.0),
                correct: i % 2 == 0,
                alt_entropy: Some((i as f64).ln_1p()),
            })
            .collect();
        let base = evaluate_emission(&records, &cfg).unwrap();
        records.reverse();
        records.rotate_left(17);
        let permuted = evaluate_emission(&records, &cfg).unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn builtin_markers_cover_both_directions() {
        let markers = builtin_teach_markers();
        assert_eq!(markers.len(), 10);
        assert_eq!(
            markers
                .iter()
                .filter(|m| m.direction == Direction::Certainty)
                .count(),
            5
        );
        let dc = teach_marker("double_check").unwrap();
        assert_eq!(dc.suffix_form, "But I would need to double check.");
        assert_eq!(dc.prefix_form, "I would need to double check but maybe it's");
        assert!(matches!(
            teach_marker("nope"),
            Err(TeachError::UnknownMarker(_))
        ));
    }

    #[test]
    fn config_rejects_bad_threshold() {
        let mut cfg = config(Direction::Certainty, Placement::Suffix, Ordering::Ascending);
        cfg.threshold = 1.0;
        assert!(matches!(
            cfg.validate(),
            Err(TeachError::BadThreshold(_))
        ));
    }
}
