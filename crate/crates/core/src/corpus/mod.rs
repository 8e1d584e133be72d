//! Marker-frequency analysis over large text corpora.
//!
//! Counts case-insensitive, word-boundary, apostrophe-folded pattern
//! occurrences in section-tagged posts (question / answer / other), builds
//! stated-percentage histograms, and draws uniform reservoir samples of
//! matches. Shard counts merge exactly: counting a corpus in any number of
//! pieces and summing gives the same report as one pass.

pub mod stream;

pub use stream::{open_text_reader, stream_path, DocStream, SectionExtractor};

use aho_corasick::{AhoCorasick, MatchKind};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Which part of a post a document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Question,
    Answer,
    Other,
}

pub const SECTIONS: [Section; 3] = [Section::Question, Section::Answer, Section::Other];

impl Section {
    pub const fn index(self) -> usize {
        match self {
            Section::Question => 0,
            Section::Answer => 1,
            Section::Other => 2,
        }
    }

    pub const fn label(self) -> &'static str {
        match self {
            Section::Question => "question",
            Section::Answer => "answer",
            Section::Other => "other",
        }
    }
}

/// One section-tagged post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub text: String,
    pub section: Section,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("pattern list is empty")]
    EmptyPatterns,
    #[error("pattern {0:?} is empty after normalization")]
    EmptyPattern(String),
    #[error("duplicate pattern {0:?} after normalization")]
    DuplicatePattern(String),
    #[error("pattern automaton: {0}")]
    Automaton(String),
    #[error("section {0} has matches but zero posts")]
    NoPosts(&'static str),
    #[error("reference counts: {0}")]
    Reference(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Fold curly apostrophes to `'` and lowercase (Unicode-aware). Applied to
/// both corpus text and patterns so "it’s" and "IT'S" count as "it's".
pub fn normalize_for_match(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\u{2018}' | '\u{2019}' => out.push('\''),
            _ => out.extend(ch.to_lowercase()),
        }
    }
    out
}

fn is_word_char(ch: char) -> bool {
    ch.is_alphanumeric() || ch == '_'
}

/// Multi-pattern matcher: case-insensitive (via [`normalize_for_match`]),
/// word-boundary on both sides, and per-pattern greedy leftmost
/// non-overlapping occurrence counting.
pub struct PatternMatcher {
    patterns: Vec<String>,
    automaton: AhoCorasick,
}

impl PatternMatcher {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, CorpusError> {
        if patterns.is_empty() {
            return Err(CorpusError::EmptyPatterns);
        }
        let mut normalized = Vec::with_capacity(patterns.len());
        for p in patterns {
            let n = normalize_for_match(p.as_ref());
            if n.trim().is_empty() {
                return Err(CorpusError::EmptyPattern(p.as_ref().to_string()));
            }
            if normalized.contains(&n) {
                return Err(CorpusError::DuplicatePattern(n));
            }
            normalized.push(n);
        }
        let automaton = AhoCorasick::builder()
            .match_kind(MatchKind::Standard)
            .build(&normalized)
            .map_err(|e| CorpusError::Automaton(e.to_string()))?;
        Ok(PatternMatcher {
            patterns: normalized,
            automaton,
        })
    }

    /// Normalized patterns, in construction order.
    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    /// Byte spans of counted occurrences per pattern in already-normalized
    /// text. A hit must sit on word boundaries (neither neighbor is
    /// alphanumeric or `_`); per pattern, overlapping hits are resolved
    /// greedily from the left.
    pub fn match_spans(&self, normalized_text: &str) -> Vec<Vec<(usize, usize)>> {
        let mut hits: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.patterns.len()];
        for m in self.automaton.find_overlapping_iter(normalized_text) {
            let (start, end) = (m.start(), m.end());
            let left_ok = normalized_text[..start]
                .chars()
                .next_back()
                .is_none_or(|c| !is_word_char(c));
            let right_ok = normalized_text[end..]
                .chars()
                .next()
                .is_none_or(|c| !is_word_char(c));
            if left_ok && right_ok {
                hits[m.pattern().as_usize()].push((start, end));
            }
        }
        for spans in &mut hits {
            spans.sort_unstable();
            let mut kept = Vec::with_capacity(spans.len());
            let mut prev_end = 0usize;
            for &(start, end) in spans.iter() {
                if kept.is_empty() || start >= prev_end {
                    kept.push((start, end));
                    prev_end = end;
                }
            }
            *spans = kept;
        }
        hits
    }
}

/// Per-pattern tallies within one section.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCount {
    /// Non-overlapping occurrences.
    pub instances: u64,
    /// Documents containing at least one occurrence.
    pub docs_with_match: u64,
}

/// Per-section corpus size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionTotals {
    /// Documents seen.
    pub posts: u64,
    /// Whitespace-delimited tokens seen.
    pub words: u64,
}

/// Counting result. Merging shard reports is exact: every field is a sum.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    /// Pattern → per-section tallies, indexed by [`Section::index`].
    pub counts: BTreeMap<String, [PatternCount; 3]>,
    /// Per-section sizes, indexed by [`Section::index`].
    pub totals: [SectionTotals; 3],
    /// Documents that could not be decoded and were skipped.
    pub skipped_docs: u64,
}

impl CountReport {
    /// Empty report with every pattern pre-seeded so shapes always agree.
    pub fn empty(patterns: &[String]) -> Self {
        CountReport {
            counts: patterns
                .iter()
                .map(|p| (p.clone(), [PatternCount::default(); 3]))
                .collect(),
            totals: [SectionTotals::default(); 3],
            skipped_docs: 0,
        }
    }

    /// Add `other` into `self`. Commutative and associative.
    pub fn merge(&mut self, other: &CountReport) {
        for (pattern, cells) in &other.counts {
            let entry = self
                .counts
                .entry(pattern.clone())
                .or_insert([PatternCount::default(); 3]);
            for i in 0..3 {
                entry[i].instances += cells[i].instances;
                entry[i].docs_with_match += cells[i].docs_with_match;
            }
        }
        for i in 0..3 {
            self.totals[i].posts += other.totals[i].posts;
            self.totals[i].words += other.totals[i].words;
        }
        self.skipped_docs += other.skipped_docs;
    }

    pub fn instances(&self, pattern: &str, section: Section) -> u64 {
        self.counts
            .get(pattern)
            .map(|cells| cells[section.index()].instances)
            .unwrap_or(0)
    }
}

/// Count one in-memory shard of documents.
pub fn count_docs_seq(docs: &[CorpusDoc], matcher: &PatternMatcher) -> CountReport {
    let mut report = CountReport::empty(matcher.patterns());
    for doc in docs {
        let sec = doc.section.index();
        report.totals[sec].posts += 1;
        report.totals[sec].words += doc.text.split_whitespace().count() as u64;
        let normalized = normalize_for_match(&doc.text);
        let spans = matcher.match_spans(&normalized);
        for (pattern, pattern_spans) in matcher.patterns().iter().zip(&spans) {
            if pattern_spans.is_empty() {
                continue;
            }
            let cell = &mut report.counts.get_mut(pattern).expect("pre-seeded")[sec];
            cell.instances += pattern_spans.len() as u64;
            cell.docs_with_match += 1;
        }
    }
    report
}

#[cfg(feature = "parallel")]
/// Parallel shard counting; identical result to [`count_docs_seq`] because
/// merge is exact integer addition.
pub fn count_docs_par(docs: &[CorpusDoc], matcher: &PatternMatcher) -> CountReport {
    use rayon::prelude::*;
    docs.par_chunks(2048)
        .map(|chunk| count_docs_seq(chunk, matcher))
        .reduce(
            || CountReport::empty(matcher.patterns()),
            |mut a, b| {
                a.merge(&b);
                a
            },
        )
}

/// Count documents, parallel when the `parallel` feature is on.
pub fn count_docs(docs: &[CorpusDoc], matcher: &PatternMatcher) -> CountReport {
    #[cfg(feature = "parallel")]
    {
        count_docs_par(docs, matcher)
    }
    #[cfg(not(feature = "parallel"))]
    {
        count_docs_seq(docs, matcher)
    }
}

const STREAM_BATCH: usize = 8192;

/// Count a JSONL corpus file in streaming batches. Undecodable lines are
/// tallied in `skipped_docs`.
pub fn count_jsonl_path(
    path: &Path,
    extractor: SectionExtractor,
    matcher: &PatternMatcher,
) -> Result<CountReport, CorpusError> {
    let mut report = CountReport::empty(matcher.patterns());
    let mut batch: Vec<CorpusDoc> = Vec::with_capacity(STREAM_BATCH);
    for item in stream_path(path, extractor)? {
        match item? {
            Some(docs) => batch.extend(docs),
            None => report.skipped_docs += 1,
        }
        if batch.len() >= STREAM_BATCH {
            report.merge(&count_docs(&batch, matcher));
            batch.clear();
        }
    }
    if !batch.is_empty() {
        report.merge(&count_docs(&batch, matcher));
    }
    Ok(report)
}

/// One row of a rate-normalized frequency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub pattern: String,
    pub section: String,
    pub instances: u64,
    pub docs_with_match: u64,
    pub per_thousand_posts: f64,
    pub per_million_words: f64,
}

/// Normalize counts into per-thousand-posts and per-million-words rates.
/// Sections with zero posts are omitted (and must then have zero matches).
pub fn normalize_rates(report: &CountReport) -> Result<Vec<RateRow>, CorpusError> {
    let mut rows = Vec::new();
    for section in SECTIONS {
        let totals = report.totals[section.index()];
        if totals.posts == 0 {
            for cells in report.counts.values() {
                if cells[section.index()].instances > 0 {
                    return Err(CorpusError::NoPosts(section.label()));
                }
            }
            continue;
        }
        for (pattern, cells) in &report.counts {
            let cell = cells[section.index()];
            rows.push(RateRow {
                pattern: pattern.clone(),
                section: section.label().to_string(),
                instances: cell.instances,
                docs_with_match: cell.docs_with_match,
                per_thousand_posts: cell.instances as f64 / totals.posts as f64 * 1e3,
                per_million_words: if totals.words == 0 {
                    0.0
                } else {
                    cell.instances as f64 / totals.words as f64 * 1e6
                },
            });
        }
    }
    Ok(rows)
}

/// Histogram of stated percentages (`NN%`) with 101 bins for 0..=100.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PctHistogram {
    pub bins: Vec<u64>,
    /// Digit runs before '%' that exceeded 100 (fractions like 350%).
    pub out_of_range: u64,
}

impl Default for PctHistogram {
    fn default() -> Self {
        PctHistogram {
            bins: vec![0; 101],
            out_of_range: 0,
        }
    }
}

impl PctHistogram {
    pub fn merge(&mut self, other: &PctHistogram) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.out_of_range += other.out_of_range;
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }
}

/// Scan one text for `digits%` tokens and add them to `hist`.
///
/// The value is the maximal ASCII digit run immediately left of `%`; runs
/// over 100 count as out-of-range. With `css_filter`, runs directly preceded
/// by `:` are ignored (markup like `width:100%`).
pub fn pct_scan_text(text: &str, css_filter: bool, hist: &mut PctHistogram) {
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'%' {
            continue;
        }
        let mut j = i;
        while j > 0 && bytes[j - 1].is_ascii_digit() {
            j -= 1;
        }
        if j == i {
            continue;
        }
        if css_filter && j > 0 && bytes[j - 1] == b':' {
            continue;
        }
        match text[j..i].parse::<u64>() {
            Ok(v) if v <= 100 => hist.bins[v as usize] += 1,
            _ => hist.out_of_range += 1,
        }
    }
}

/// Histogram over a document shard.
pub fn pct_histogram_seq(docs: &[CorpusDoc], css_filter: bool) -> PctHistogram {
    let mut hist = PctHistogram::default();
    for doc in docs {
        pct_scan_text(&doc.text, css_filter, &mut hist);
    }
    hist
}

#[cfg(feature = "parallel")]
/// Parallel histogram; exact match with sequential by additive merge.
pub fn pct_histogram_par(docs: &[CorpusDoc], css_filter: bool) -> PctHistogram {
    use rayon::prelude::*;
    docs.par_chunks(2048)
        .map(|chunk| pct_histogram_seq(chunk, css_filter))
        .reduce(PctHistogram::default, |mut a, b| {
            a.merge(&b);
            a
        })
}

/// Histogram of stated percentages, parallel when enabled.
pub fn pct_histogram(docs: &[CorpusDoc], css_filter: bool) -> PctHistogram {
    #[cfg(feature = "parallel")]
    {
        pct_histogram_par(docs, css_filter)
    }
    #[cfg(not(feature = "parallel"))]
    {
        pct_histogram_seq(docs, css_filter)
    }
}

/// Histogram over a JSONL corpus file.
pub fn pct_histogram_jsonl_path(
    path: &Path,
    extractor: SectionExtractor,
    css_filter: bool,
) -> Result<PctHistogram, CorpusError> {
    let mut hist = PctHistogram::default();
    let mut batch: Vec<CorpusDoc> = Vec::with_capacity(STREAM_BATCH);
    for item in stream_path(path, extractor)? {
        if let Some(docs) = item? {
            batch.extend(docs);
        }
        if batch.len() >= STREAM_BATCH {
            hist.merge(&pct_histogram(&batch, css_filter));
            batch.clear();
        }
    }
    if !batch.is_empty() {
        hist.merge(&pct_histogram(&batch, css_filter));
    }
    Ok(hist)
}

/// One sampled occurrence with surrounding context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSample {
    pub section: Section,
    pub excerpt: String,
}

fn excerpt_around(normalized: &str, start: usize, end: usize, context_chars: usize) -> String {
    let mut left = start;
    for _ in 0..context_chars {
        match normalized[..left].chars().next_back() {
            Some(c) => left -= c.len_utf8(),
            None => break,
        }
    }
    let mut right = end;
    for _ in 0..context_chars {
        match normalized[right..].chars().next() {
            Some(c) => right += c.len_utf8(),
            None => break,
        }
    }
    normalized[left..right].to_string()
}

/// Uniform reservoir sample (Algorithm R) of up to `n` occurrences of a
/// single pattern, deterministic in `seed`. Sequential by design: the
/// reservoir state is order-dependent.
pub fn sample_matches<I: IntoIterator<Item = CorpusDoc>>(
    docs: I,
    pattern: &str,
    n: usize,
    context_chars: usize,
    seed: u64,
) -> Result<Vec<MatchSample>, CorpusError> {
    let matcher = PatternMatcher::new(&[pattern])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<MatchSample> = Vec::with_capacity(n);
    let mut seen: u64 = 0;
    if n == 0 {
        return Ok(reservoir);
    }
    for doc in docs {
        let normalized = normalize_for_match(&doc.text);
        for &(start, end) in &matcher.match_spans(&normalized)[0] {
            seen += 1;
            let sample = MatchSample {
                section: doc.section,
                excerpt: excerpt_around(&normalized, start, end, context_chars),
            };
            if reservoir.len() < n {
                reservoir.push(sample);
            } else {
                let j = rng.random_range(0..seen);
                if (j as usize) < n {
                    reservoir[j as usize] = sample;
                }
            }
        }
    }
    Ok(reservoir)
}

/// A published per-pattern count from a Stack Exchange dump, used as a
/// regression target for the aggregation pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceCount {
    pub pattern: String,
    /// "hedge" or "booster".
    pub tag: String,
    pub question_instances: u64,
    pub answer_instances: u64,
}

impl ReferenceCount {
    /// View this row as a single-pattern [`CountReport`] shard (totals and
    /// docs-with-match unknown, left zero).
    pub fn as_report(&self) -> CountReport {
        let mut cells = [PatternCount::default(); 3];
        cells[Section::Question.index()].instances = self.question_instances;
        cells[Section::Answer.index()].instances = self.answer_instances;
        CountReport {
            counts: BTreeMap::from([(self.pattern.clone(), cells)]),
            totals: [SectionTotals::default(); 3],
            skipped_docs: 0,
        }
    }
}

/// Parse the TSV form of the published counts.
pub fn parse_reference_counts(tsv: &str) -> Result<Vec<ReferenceCount>, CorpusError> {
    let mut rows = Vec::new();
    for (lineno, line) in tsv.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CorpusError::Reference(format!(
                "line {}: expected 4 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_u64 = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| CorpusError::Reference(format!("line {}: {}", lineno + 1, e)))
        };
        rows.push(ReferenceCount {
            pattern: fields[0].to_string(),
            tag: fields[1].to_string(),
            question_instances: parse_u64(fields[2])?,
            answer_instances: parse_u64(fields[3])?,
        });
    }
    if rows.is_empty() {
        return Err(CorpusError::Reference("no data rows".to_string()));
    }
    Ok(rows)
}

/// Built-in published counts (12 hedge/booster patterns).
pub fn reference_counts() -> Vec<ReferenceCount> {
    parse_reference_counts(include_str!("../../fixtures/stackexchange_counts.tsv"))
        .expect("built-in reference counts parse")
}

/// Sum instances of all reference rows with `tag`, by merging one shard
/// report per row through [`CountReport::merge`].
pub fn reference_tag_totals(rows: &[ReferenceCount], tag: &str) -> (u64, u64) {
    let mut merged = CountReport::default();
    for row in rows.iter().filter(|r| r.tag == tag) {
        merged.merge(&row.as_report());
    }
    let q = merged
        .counts
        .values()
        .map(|c| c[Section::Question.index()].instances)
        .sum();
    let a = merged
        .counts
        .values()
        .map(|c| c[Section::Answer.index()].instances)
        .sum();
    (q, a)
}
