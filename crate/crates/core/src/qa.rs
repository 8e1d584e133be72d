//! QA datasets: loading, generation, answer-vocabulary filtering, sampling.
//!
//! Items carry an ordered alias set; the first alias is the primary gold
//! answer and the rest are acceptable alternative spellings. Datasets come
//! from JSONL files with a configurable field mapping, or from the built-in
//! country/capital table.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

/// One short-answer question with its acceptable gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    /// Nonempty; first element is the primary answer.
    pub gold_aliases: Vec<String>,
    /// Which dataset the item came from (for manifests and reports).
    pub dataset: String,
}

impl QAItem {
    pub fn primary_answer(&self) -> &str {
        &self.gold_aliases[0]
    }
}

/// A set of answer tokens a model can emit in one step.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub name: String,
    tokens: HashSet<String>,
}

impl Vocabulary {
    pub fn from_tokens(name: &str, tokens: impl IntoIterator<Item = String>) -> Self {
        Vocabulary {
            name: name.to_string(),
            tokens: tokens.into_iter().collect(),
        }
    }

    /// Load a vocabulary file: one token per line, blank lines skipped.
    pub fn from_path(path: &Path) -> Result<Self, QaError> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "vocabulary".to_string());
        let text = std::fs::read_to_string(path)?;
        let tokens = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .map(str::to_string);
        Ok(Vocabulary::from_tokens(&name, tokens))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Which JSON fields hold the question, the answers, and (optionally) the id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMap {
    pub question: String,
    pub answers: String,
    pub id: Option<String>,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            question: "question".to_string(),
            answers: "answers".to_string(),
            id: Some("id".to_string()),
        }
    }
}

/// A loaded dataset plus warnings for rejected lines.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub items: Vec<QAItem>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: not a JSON object: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: missing field '{field}'")]
    MissingField { line: usize, field: String },
    #[error("country/capital pair list is empty")]
    EmptyPairs,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot sample {n} items from {available}")]
    SampleTooLarge { n: usize, available: usize },
}

fn json_field_as_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Load one QAItem per JSONL line. Lines that fail to parse are hard errors;
/// lines whose mapped fields are empty are skipped with a warning. A missing
/// id field falls back to the 1-based line number.
pub fn load_qa_jsonl(
    path: &Path,
    field_map: &FieldMap,
    dataset: &str,
) -> Result<LoadedDataset, QaError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| QaError::Json {
                line: line_no,
                source,
            })?;
        let question = value
            .get(&field_map.question)
            .and_then(json_field_as_string)
            .ok_or_else(|| QaError::MissingField {
                line: line_no,
                field: field_map.question.clone(),
            })?;
        let answers_value = value
            .get(&field_map.answers)
            .ok_or_else(|| QaError::MissingField {
                line: line_no,
                field: field_map.answers.clone(),
            })?;
        let gold_aliases: Vec<String> = match answers_value {
            serde_json::Value::String(s) => vec![s.clone()],
            serde_json::Value::Array(arr) => arr
                .iter()
                .filter_map(json_field_as_string)
                .filter(|s| !s.is_empty())
                .collect(),
            _ => Vec::new(),
        };
        if gold_aliases.is_empty() {
            warnings.push(format!("line {line_no}: no usable answers, item rejected"));
            continue;
        }
        if question.trim().is_empty() {
            warnings.push(format!("line {line_no}: empty question, item rejected"));
            continue;
        }
        let id = field_map
            .id
            .as_ref()
            .and_then(|f| value.get(f))
            .and_then(json_field_as_string)
            .unwrap_or_else(|| line_no.to_string());
        items.push(QAItem {
            id,
            question,
            gold_aliases,
            dataset: dataset.to_string(),
        });
    }
    Ok(LoadedDataset { items, warnings })
}

/// Build "What is the capital of {country}?" items, one per pair.
pub fn generate_country_qa(pairs: &[(String, String)]) -> Result<Vec<QAItem>, QaError> {
    if pairs.is_empty() {
        return Err(QaError::EmptyPairs);
    }
    Ok(pairs
        .iter()
        .map(|(country, capital)| QAItem {
            id: format!("capital_{}", country.to_lowercase().replace(' ', "_")),
            question: format!("What is the capital of {country}?"),
            gold_aliases: vec![capital.clone()],
            dataset: "country_capitals".to_string(),
        })
        .collect())
}

/// Read (country, capital) pairs from a two-column CSV with a header row.
pub fn load_country_pairs(path: &Path) -> Result<Vec<(String, String)>, QaError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() >= 2 {
            pairs.push((record[0].to_string(), record[1].to_string()));
        }
    }
    Ok(pairs)
}

/// The country/capital table shipped with the crate.
pub fn builtin_country_pairs() -> Vec<(String, String)> {
    let text = include_str!("../fixtures/countries.csv");
    text.lines()
        .skip(1) // header
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| {
            let (country, capital) = l.split_once(',')?;
            Some((country.to_string(), capital.to_string()))
        })
        .collect()
}

/// Default tokenizer: split on whitespace and ASCII punctuation, drop empties.
pub fn default_tokenizer(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Keep items whose primary answer is a single in-vocabulary token; within
/// kept items, drop secondary aliases containing any out-of-vocabulary token.
pub fn filter_answerable(
    items: &[QAItem],
    vocab: &Vocabulary,
    tokenizer: impl Fn(&str) -> Vec<String>,
) -> Vec<QAItem> {
    let mut kept = Vec::new();
    for item in items {
        let primary_tokens = tokenizer(item.primary_answer());
        if primary_tokens.len() != 1 || !vocab.contains(&primary_tokens[0]) {
            continue;
        }
        let mut filtered = item.clone();
        filtered.gold_aliases = item
            .gold_aliases
            .iter()
            .enumerate()
            .filter(|(i, alias)| {
                *i == 0 || {
                    let toks = tokenizer(alias);
                    !toks.is_empty() && toks.iter().all(|t| vocab.contains(t))
                }
            })
            .map(|(_, alias)| alias.clone())
            .collect();
        kept.push(filtered);
    }
    kept
}

/// Draw `n` items without replacement. Deterministic for a fixed seed and
/// independent of input order: items are sorted by id before shuffling.
pub fn sample_subset(items: &[QAItem], n: usize, seed: u64) -> Result<Vec<QAItem>, QaError> {
    if n > items.len() {
        return Err(QaError::SampleTooLarge {
            n,
            available: items.len(),
        });
    }
    let mut sorted: Vec<QAItem> = items.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sampled, _) = sorted.partial_shuffle(&mut rng, n);
    Ok(sampled.to_vec())
}
