//! Deterministic mock backend driven by a JSON model spec.
//!
//! The spec assigns each question a base distribution over candidate answers
//! (first candidate = gold). Feature modifiers multiply the gold answer's
//! probability for prompts whose marker features match a predicate, after
//! which the distribution is renormalized — this is how fixtures encode
//! "this model answers factive prompts worse". Identical `(spec, request)`
//! pairs always produce byte-identical completions: sampling noise comes from
//! a counter-free RNG seeded by hashing the request itself.

use super::{Backend, BackendError, Completion, CompletionRequest, FinishReason, TokenStep};
use crate::typology::FeaturePredicate;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

/// One candidate answer with its base probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockCandidate {
    pub answer: String,
    pub p: f64,
}

/// A question the mock model knows how to answer. The first candidate is the
/// gold answer; `p` values must sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockQuestion {
    pub id: String,
    #[serde(default)]
    pub question: String,
    pub candidates: Vec<MockCandidate>,
}

/// Multiplies the gold answer's probability when the prompt's marker
/// features match `when`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModifier {
    pub when: FeaturePredicate,
    pub factor: f64,
}

/// Extra tokens emitted before the answer for one template id; models the
/// "generates words prior to emitting the answer" behaviour of some markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillerRule {
    pub template_id: String,
    pub tokens: Vec<String>,
}

fn default_char_cost() -> f64 {
    0.25
}

/// Complete description of a mock model; stored as a JSON fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockModelSpec {
    pub seed: u64,
    /// Log-prob penalty per character for out-of-fixture tokens in
    /// `score_text` (gives templates distinct, length-sensitive perplexity).
    #[serde(default = "default_char_cost")]
    pub score_char_cost: f64,
    pub questions: Vec<MockQuestion>,
    #[serde(default)]
    pub feature_modifiers: Vec<FeatureModifier>,
    #[serde(default)]
    pub filler_templates: Vec<FillerRule>,
}

impl MockModelSpec {
    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)?;
        let spec: MockModelSpec = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidSpec(format!("unparsable JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let mut seen = std::collections::HashSet::new();
        for q in &self.questions {
            if !seen.insert(q.id.as_str()) {
                return Err(BackendError::InvalidSpec(format!(
                    "duplicate question id '{}'",
                    q.id
                )));
            }
            if q.candidates.is_empty() {
                return Err(BackendError::InvalidSpec(format!(
                    "question '{}' has no candidates",
                    q.id
                )));
            }
            let sum: f64 = q.candidates.iter().map(|c| c.p).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(BackendError::InvalidSpec(format!(
                    "question '{}' probabilities sum to {sum}, not 1",
                    q.id
                )));
            }
            if q.candidates.iter().any(|c| c.p <= 0.0 || c.p > 1.0) {
                return Err(BackendError::InvalidSpec(format!(
                    "question '{}' has a probability outside (0,1]",
                    q.id
                )));
            }
        }
        if self.feature_modifiers.iter().any(|m| m.factor <= 0.0) {
            return Err(BackendError::InvalidSpec(
                "feature modifier factors must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// The deterministic test double.
pub struct MockBackend {
    spec: MockModelSpec,
    by_id: HashMap<String, usize>,
    fillers: HashMap<String, Vec<String>>,
}

impl MockBackend {
    pub fn new(spec: MockModelSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        let by_id = spec
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.id.clone(), i))
            .collect();
        let fillers = spec
            .filler_templates
            .iter()
            .map(|f| (f.template_id.clone(), f.tokens.clone()))
            .collect();
        Ok(MockBackend {
            spec,
            by_id,
            fillers,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        MockBackend::new(MockModelSpec::from_path(path)?)
    }

    pub fn spec(&self) -> &MockModelSpec {
        &self.spec
    }

    /// The gold-modified, renormalized answer distribution for one question
    /// under one set of marker features. Candidate order is preserved.
    pub fn adjusted_distribution(
        &self,
        question_id: &str,
        features: &crate::typology::LinguisticFeatures,
    ) -> Result<Vec<(String, f64)>, BackendError> {
        let q = self
            .by_id
            .get(question_id)
            .map(|&i| &self.spec.questions[i])
            .ok_or_else(|| BackendError::UnknownQuestion(question_id.to_string()))?;
        let mut factor = 1.0;
        for m in &self.spec.feature_modifiers {
            if m.when.matches(features) {
                factor *= m.factor;
            }
        }
        let mut probs: Vec<(String, f64)> = q
            .candidates
            .iter()
            .map(|c| (c.answer.clone(), c.p))
            .collect();
        probs[0].1 *= factor;
        let sum: f64 = probs.iter().map(|(_, p)| p).sum();
        for (_, p) in &mut probs {
            *p /= sum;
        }
        Ok(probs)
    }

    /// Hash the request identity into a sampling seed so completions are a
    /// pure function of (spec, request) regardless of call order or threads.
    fn request_seed(&self, request: &CompletionRequest) -> u64 {
        let tag = request.context.as_ref();
        let mut h = Sha256::new();
        h.update(self.spec.seed.to_le_bytes());
        h.update(request.seed.to_le_bytes());
        if let Some(t) = tag {
            h.update(t.item_id.as_bytes());
            h.update([0x1f]);
            h.update(t.template_id.as_bytes());
            h.update([0x1f]);
            h.update([t.stated_pct.map_or(0xff, |p| p)]);
        }
        h.update([0x1f]);
        h.update(request.prompt.as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let tag = request.context.as_ref().ok_or(BackendError::MissingContext)?;
        let dist = self.adjusted_distribution(&tag.item_id, &tag.features)?;

        // Pick the emitted answer: greedy at temperature 0, otherwise a
        // seeded draw from the temperature-scaled distribution.
        let chosen = if request.temperature == 0.0 {
            dist.iter()
                .enumerate()
                .max_by(|(ia, (_, pa)), (ib, (_, pb))| {
                    pa.partial_cmp(pb)
                        .unwrap()
                        .then(ib.cmp(ia)) // tie → earliest candidate
                })
                .map(|(i, _)| i)
                .expect("distribution is nonempty")
        } else {
            let weights: Vec<f64> = dist
                .iter()
                .map(|(_, p)| p.powf(1.0 / request.temperature))
                .collect();
            let idx = WeightedIndex::new(&weights)
                .map_err(|e| BackendError::InvalidSpec(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(self.request_seed(request));
            idx.sample(&mut rng)
        };

        // Alternatives reported at the answer step: top-k of the adjusted
        // distribution (the model's probabilities; temperature only affects
        // which token got sampled), plus the emitted token if it fell
        // outside the top k.
        let mut ranked: Vec<(String, f64)> = dist.clone();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let mut alternatives = BTreeMap::new();
        if request.top_k_alternatives > 0 {
            for (tok, p) in ranked.iter().take(request.top_k_alternatives) {
                alternatives.insert(format!(" {tok}"), p.ln());
            }
            let emitted = format!(" {}", dist[chosen].0);
            alternatives.entry(emitted).or_insert(dist[chosen].1.ln());
        }

        let mut steps = Vec::new();
        if let Some(filler) = self.fillers.get(&tag.template_id) {
            for tok in filler {
                let mut only = BTreeMap::new();
                only.insert(tok.clone(), 0.0);
                steps.push(TokenStep {
                    token: tok.clone(),
                    logprob: Some(0.0),
                    alternatives: only,
                });
            }
        }
        steps.push(TokenStep {
            token: format!(" {}", dist[chosen].0),
            logprob: Some(dist[chosen].1.ln()),
            alternatives,
        });

        let truncated = steps.len() > request.max_tokens;
        steps.truncate(request.max_tokens);
        let finish = if truncated {
            FinishReason::Length
        } else {
            FinishReason::Stop
        };
        Ok(Completion::from_steps(steps, finish))
    }

    fn score_text(&self, _context: &str, continuation: &str) -> Result<Vec<TokenStep>, BackendError> {
        let mut steps = Vec::new();
        let starts_with_space = continuation.starts_with(char::is_whitespace);
        for (i, word) in continuation.split_whitespace().enumerate() {
            // Known candidate answers score at their fixture probability;
            // anything else pays a per-character cost.
            let logprob = self
                .spec
                .questions
                .iter()
                .flat_map(|q| q.candidates.iter())
                .find(|c| c.answer == word)
                .map(|c| c.p.ln())
                .unwrap_or_else(|| -self.spec.score_char_cost * word.chars().count() as f64);
            let token = if i == 0 && !starts_with_space {
                word.to_string()
            } else {
                format!(" {word}")
            };
            steps.push(TokenStep {
                token,
                logprob: Some(logprob),
                alternatives: BTreeMap::new(),
            });
        }
        Ok(steps)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "mock"
    }
}
