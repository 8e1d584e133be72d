//! Typed registry of epistemic marker templates.
//!
//! Each marker is a short English phrase (`"I think it's"`, `"We know it's"`)
//! that gets spliced into a QA prompt directly after `"A:"`, plus a coding of
//! that phrase along six linguistic feature axes. The registry ships with a
//! built-in set of fifty coded markers and a *standard-method sentinel*: an
//! empty-surface pseudo-template standing for the bare `"Q: ... A:"` prompt
//! that every marker condition is compared against.
//!
//! Registries are stored as tab-separated text so they can be reviewed and
//! edited by hand; `#` starts a comment line.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Whether the marker weakens, strengthens, or leaves unchanged the asserted
/// confidence of the answer it precedes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Weakener,
    Strengthener,
    Neutral,
}

impl Strength {
    pub fn label(self) -> &'static str {
        match self {
            Strength::Weakener => "weakener",
            Strength::Strengthener => "strengthener",
            Strength::Neutral => "neutral",
        }
    }
}

/// Plausibility shields (`"maybe"`, `"I think"`, ...) mark the proposition as
/// possible rather than asserted; all other markers carry no shield.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shield {
    Plausibility,
    None,
}

impl Shield {
    pub fn label(self) -> &'static str {
        match self {
            Shield::Plausibility => "plausibility",
            Shield::None => "none",
        }
    }
}

/// Six-axis linguistic coding of one marker phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinguisticFeatures {
    pub strength: Strength,
    pub shield: Shield,
    /// Mentions how the speaker came to know (hearsay, perception, report).
    pub evidential: bool,
    /// Embeds the answer under a predicate that presupposes its truth.
    pub factive: bool,
    /// Names a concrete information source (Wikipedia, studies, rules...).
    pub sourced: bool,
    /// Contains a first-person pronoun.
    pub first_person: bool,
}

impl LinguisticFeatures {
    /// Coding of the bare control prompt: neutral and unmarked on every axis.
    pub const fn neutral() -> Self {
        LinguisticFeatures {
            strength: Strength::Neutral,
            shield: Shield::None,
            evidential: false,
            factive: false,
            sourced: false,
            first_person: false,
        }
    }
}

/// Template id reserved for the standard-method sentinel.
pub const STANDARD_TEMPLATE_ID: &str = "standard";

/// Slot substring replaced by an integer percentage in numeric templates.
pub const NUMERIC_SLOT: &str = "{pct}";

/// One marker phrase plus its feature coding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarkerTemplate {
    pub id: String,
    /// Phrase inserted after `"A:"`; empty only for the standard sentinel.
    pub surface: String,
    pub features: LinguisticFeatures,
}

impl MarkerTemplate {
    /// The sentinel standing for the bare, marker-free prompt.
    pub fn standard() -> Self {
        MarkerTemplate {
            id: STANDARD_TEMPLATE_ID.to_string(),
            surface: String::new(),
            features: LinguisticFeatures::neutral(),
        }
    }

    pub fn is_standard(&self) -> bool {
        self.surface.is_empty()
    }

    pub fn has_numeric_slot(&self) -> bool {
        self.surface.contains(NUMERIC_SLOT)
    }
}

/// Matches feature vectors against a partially-specified pattern; axes left
/// as `None` match anything. Used for grouping filters and for the mock
/// backend's per-feature probability modifiers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturePredicate {
    pub strength: Option<Strength>,
    pub shield: Option<Shield>,
    pub evidential: Option<bool>,
    pub factive: Option<bool>,
    pub sourced: Option<bool>,
    pub first_person: Option<bool>,
}

impl FeaturePredicate {
    pub fn matches(&self, f: &LinguisticFeatures) -> bool {
        self.strength.map_or(true, |v| v == f.strength)
            && self.shield.map_or(true, |v| v == f.shield)
            && self.evidential.map_or(true, |v| v == f.evidential)
            && self.factive.map_or(true, |v| v == f.factive)
            && self.sourced.map_or(true, |v| v == f.sourced)
            && self.first_person.map_or(true, |v| v == f.first_person)
    }
}

/// Structural problem found by [`Registry::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub template_id: String,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateId,
    EmptySurface,
    SurfaceWhitespace,
    SourcedWithoutEvidential,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::DuplicateId => "duplicate template id",
            ViolationKind::EmptySurface => "marker surface is empty",
            ViolationKind::SurfaceWhitespace => "surface has leading or trailing whitespace",
            ViolationKind::SourcedWithoutEvidential => {
                "coded as sourced but not as evidential (a named source is a kind of evidence)"
            }
        };
        write!(f, "{}: {}", self.template_id, what)
    }
}

/// Outcome of validating a registry: hard violations plus advisory warnings.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum TypologyError {
    #[error("registry line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("failed to read registry file: {0}")]
    Io(#[from] std::io::Error),
    #[error("template '{0}' has no {NUMERIC_SLOT} slot")]
    NoNumericSlot(String),
    #[error("invalid percentage grid: {0}")]
    InvalidGrid(String),
    #[error("unknown template id '{0}'")]
    UnknownTemplate(String),
}

const BUILTIN_REGISTRY_TSV: &str = include_str!("../fixtures/registry.tsv");
const BUILTIN_NUMERIC_TSV: &str = include_str!("../fixtures/numeric_templates.tsv");

/// An ordered set of marker templates plus the standard sentinel.
#[derive(Debug, Clone)]
pub struct Registry {
    markers: Vec<MarkerTemplate>,
    standard: MarkerTemplate,
}

impl Registry {
    /// The built-in fifty-marker registry.
    pub fn builtin() -> Self {
        Registry::parse(BUILTIN_REGISTRY_TSV).expect("built-in registry must parse")
    }

    /// The built-in numerical-certainty templates (each has a `{pct}` slot).
    pub fn numeric_builtin() -> Self {
        Registry::parse(BUILTIN_NUMERIC_TSV).expect("built-in numeric templates must parse")
    }

    /// Parse a TSV registry. Exactly one empty-surface row may be present and
    /// becomes the standard sentinel; if absent, a default sentinel is added.
    pub fn parse(text: &str) -> Result<Self, TypologyError> {
        let mut markers = Vec::new();
        let mut standard: Option<MarkerTemplate> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 8 {
                return Err(TypologyError::Parse {
                    line: line_no,
                    msg: format!("expected 8 tab-separated fields, found {}", fields.len()),
                });
            }
            let parse_bool = |s: &str, name: &str| -> Result<bool, TypologyError> {
                match s {
                    "true" => Ok(true),
                    "false" => Ok(false),
                    other => Err(TypologyError::Parse {
                        line: line_no,
                        msg: format!("{name} must be 'true' or 'false', found '{other}'"),
                    }),
                }
            };
            let strength = match fields[2] {
                "weakener" => Strength::Weakener,
                "strengthener" => Strength::Strengthener,
                "neutral" => Strength::Neutral,
                other => {
                    return Err(TypologyError::Parse {
                        line: line_no,
                        msg: format!("unknown strength '{other}'"),
                    })
                }
            };
            let shield = match fields[3] {
                "plausibility" => Shield::Plausibility,
                "none" => Shield::None,
                other => {
                    return Err(TypologyError::Parse {
                        line: line_no,
                        msg: format!("unknown shield '{other}'"),
                    })
                }
            };
            let template = MarkerTemplate {
                id: fields[0].to_string(),
                surface: fields[1].to_string(),
                features: LinguisticFeatures {
                    strength,
                    shield,
                    evidential: parse_bool(fields[4], "evidential")?,
                    factive: parse_bool(fields[5], "factive")?,
                    sourced: parse_bool(fields[6], "sourced")?,
                    first_person: parse_bool(fields[7], "first_person")?,
                },
            };
            if template.id.is_empty() {
                return Err(TypologyError::Parse {
                    line: line_no,
                    msg: "template id is empty".to_string(),
                });
            }
            if template.surface.is_empty() {
                if standard.is_some() {
                    return Err(TypologyError::Parse {
                        line: line_no,
                        msg: "second empty-surface row; only one standard sentinel is allowed"
                            .to_string(),
                    });
                }
                standard = Some(template);
            } else {
                markers.push(template);
            }
        }
        Ok(Registry {
            markers,
            standard: standard.unwrap_or_else(MarkerTemplate::standard),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, TypologyError> {
        Registry::parse(&std::fs::read_to_string(path)?)
    }

    /// Marker templates in file order (sentinel not included).
    pub fn markers(&self) -> &[MarkerTemplate] {
        &self.markers
    }

    /// The standard-method sentinel.
    pub fn standard(&self) -> &MarkerTemplate {
        &self.standard
    }

    /// All prompt variants an experiment runs per item: every marker in
    /// registry order, then the standard sentinel last.
    pub fn all_variants(&self) -> Vec<&MarkerTemplate> {
        let mut v: Vec<&MarkerTemplate> = self.markers.iter().collect();
        v.push(&self.standard);
        v
    }

    /// Look up a template (marker or sentinel) by id.
    pub fn get(&self, id: &str) -> Option<&MarkerTemplate> {
        if self.standard.id == id {
            return Some(&self.standard);
        }
        self.markers.iter().find(|t| t.id == id)
    }

    /// Check the structural invariants that make a registry usable.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut seen = std::collections::HashSet::new();
        for t in self.all_variants() {
            if !seen.insert(t.id.as_str()) {
                report.violations.push(Violation {
                    template_id: t.id.clone(),
                    kind: ViolationKind::DuplicateId,
                });
            }
        }
        for t in &self.markers {
            if t.surface.is_empty() {
                report.violations.push(Violation {
                    template_id: t.id.clone(),
                    kind: ViolationKind::EmptySurface,
                });
            } else if t.surface.trim() != t.surface {
                report.violations.push(Violation {
                    template_id: t.id.clone(),
                    kind: ViolationKind::SurfaceWhitespace,
                });
            }
            if t.features.sourced && !t.features.evidential {
                report.violations.push(Violation {
                    template_id: t.id.clone(),
                    kind: ViolationKind::SourcedWithoutEvidential,
                });
            }
        }
        if self.markers.is_empty() {
            report
                .warnings
                .push("registry contains no marker templates".to_string());
        }
        report
    }

    /// Canonical TSV serialization (data rows only, sentinel last). Two
    /// registries with the same content produce identical text.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in self.all_variants() {
            let f = &t.features;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                t.id,
                t.surface,
                f.strength.label(),
                f.shield.label(),
                f.evidential,
                f.factive,
                f.sourced,
                f.first_person
            ));
        }
        out
    }

    /// Hex SHA-256 of the canonical serialization; recorded in run manifests
    /// so a report can verify it was built against the same registry.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// Keep exactly the templates whose features satisfy `pred`, preserving order.
pub fn filter_templates(
    templates: &[MarkerTemplate],
    pred: impl Fn(&LinguisticFeatures) -> bool,
) -> Vec<MarkerTemplate> {
    templates
        .iter()
        .filter(|t| pred(&t.features))
        .cloned()
        .collect()
}

/// Integer percentage grid for numeric templates: strictly increasing, 0-100.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericGrid(Vec<u8>);

impl NumericGrid {
    pub fn new(values: Vec<u8>) -> Result<Self, TypologyError> {
        if values.is_empty() {
            return Err(TypologyError::InvalidGrid("grid is empty".to_string()));
        }
        for w in values.windows(2) {
            if w[0] >= w[1] {
                return Err(TypologyError::InvalidGrid(format!(
                    "values must be strictly increasing, found {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&max) = values.last() {
            if max > 100 {
                return Err(TypologyError::InvalidGrid(format!(
                    "percentages cannot exceed 100, found {max}"
                )));
            }
        }
        Ok(NumericGrid(values))
    }

    /// The grid used by default: `0, 10, 30, 50, 70, 90, 100`.
    pub fn default_grid() -> Self {
        NumericGrid(vec![0, 10, 30, 50, 70, 90, 100])
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }
}

/// Fill a numeric template's `{pct}` slot with one percentage. The id gains
/// a `_{pct}` suffix so expanded templates stay distinguishable.
pub fn instantiate_numeric(
    template: &MarkerTemplate,
    pct: u8,
) -> Result<MarkerTemplate, TypologyError> {
    if !template.has_numeric_slot() {
        return Err(TypologyError::NoNumericSlot(template.id.clone()));
    }
    Ok(MarkerTemplate {
        id: format!("{}_{}", template.id, pct),
        surface: template.surface.replace(NUMERIC_SLOT, &pct.to_string()),
        features: template.features,
    })
}

/// Expand a numeric template over a whole grid, one template per percentage.
pub fn expand_numeric(
    template: &MarkerTemplate,
    grid: &NumericGrid,
) -> Result<Vec<MarkerTemplate>, TypologyError> {
    grid.values()
        .iter()
        .map(|&pct| instantiate_numeric(template, pct))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builtin_counts_match_coding_table() {
        let reg = Registry::builtin();
        assert_eq!(reg.markers().len(), 50);
        let count = |p: fn(&LinguisticFeatures) -> bool| {
            reg.markers().iter().filter(|t| p(&t.features)).count()
        };
        assert_eq!(count(|f| f.strength == Strength::Weakener), 31);
        assert_eq!(count(|f| f.strength == Strength::Strengthener), 18);
        assert_eq!(count(|f| f.strength == Strength::Neutral), 1);
        assert_eq!(count(|f| f.factive), 11);
        assert_eq!(count(|f| f.sourced), 16);
        assert_eq!(count(|f| f.evidential), 27);
        assert_eq!(count(|f| f.first_person), 23);
        assert_eq!(count(|f| f.shield == Shield::Plausibility), 16);
    }

    #[test]
    fn builtin_is_clean_and_digest_is_stable() {
        let reg = Registry::builtin();
        let report = reg.validate();
        assert!(report.is_clean(), "violations: {:?}", report.violations);
        assert!(report.warnings.is_empty());
        assert_eq!(reg.digest(), Registry::builtin().digest());
        assert_eq!(reg.digest().len(), 64);
    }

    #[test]
    fn spot_check_codings() {
        let reg = Registry::builtin();
        let wiki = reg.get("wikipedia_says").unwrap();
        assert_eq!(wiki.surface, "Wikipedia says it's");
        assert_eq!(wiki.features.strength, Strength::Weakener);
        assert_eq!(wiki.features.shield, Shield::None);
        assert!(wiki.features.evidential);
        assert!(!wiki.features.factive);
        assert!(wiki.features.sourced);
        assert!(!wiki.features.first_person);

        let know = reg.get("we_know").unwrap();
        assert_eq!(know.surface, "We know it's");
        assert_eq!(know.features.strength, Strength::Strengthener);
        assert!(know.features.factive);
        assert!(!know.features.evidential);
        assert!(know.features.first_person);

        let neutral = reg.get("its").unwrap();
        assert_eq!(neutral.surface, "It's");
        assert_eq!(neutral.features.strength, Strength::Neutral);
    }

    #[test]
    fn standard_sentinel_is_bare_and_neutral() {
        let reg = Registry::builtin();
        let std_t = reg.standard();
        assert_eq!(std_t.id, STANDARD_TEMPLATE_ID);
        assert!(std_t.is_standard());
        assert_eq!(std_t.features, LinguisticFeatures::neutral());
        assert_eq!(reg.all_variants().len(), 51);
        assert!(reg.all_variants().last().unwrap().is_standard());
    }

    #[test]
    fn factive_filter_selects_the_eleven_factives() {
        let reg = Registry::builtin();
        let factives = filter_templates(reg.markers(), |f| f.factive);
        let ids: Vec<&str> = factives.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "known_that",
                "recent_evidence",
                "rules_state",
                "two_studies",
                "wikipedia_acknowledges",
                "wikipedia_confirms",
                "our_lab",
                "must_be",
                "we_realize",
                "we_understand",
                "we_know",
            ]
        );
    }

    #[test]
    fn parse_rejects_malformed_rows() {
        let err = Registry::parse("only\tthree\tfields").unwrap_err();
        assert!(matches!(err, TypologyError::Parse { line: 1, .. }));

        let bad_bool = "x\tX it's\tweakener\tnone\tyes\tfalse\tfalse\tfalse";
        assert!(Registry::parse(bad_bool).is_err());

        let bad_strength = "x\tX it's\tstrong\tnone\ttrue\tfalse\tfalse\tfalse";
        assert!(Registry::parse(bad_strength).is_err());

        let two_sentinels = "a\t\tneutral\tnone\tfalse\tfalse\tfalse\tfalse\n\
                             b\t\tneutral\tnone\tfalse\tfalse\tfalse\tfalse";
        assert!(Registry::parse(two_sentinels).is_err());
    }

    #[test]
    fn empty_input_yields_empty_registry_with_warning() {
        let reg = Registry::parse("# nothing here\n").unwrap();
        assert!(reg.markers().is_empty());
        assert_eq!(reg.standard().id, STANDARD_TEMPLATE_ID);
        let report = reg.validate();
        assert!(report.is_clean());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn validate_flags_each_violation_kind() {
        let text = "dup\tA it's\tweakener\tnone\tfalse\tfalse\tfalse\tfalse\n\
                    dup\tB it's\tweakener\tnone\tfalse\tfalse\tfalse\tfalse\n\
                    spacey\tC it's \tweakener\tnone\tfalse\tfalse\tfalse\tfalse\n\
                    bad_source\tD it's\tweakener\tnone\tfalse\tfalse\ttrue\tfalse";
        let reg = Registry::parse(text).unwrap();
        let kinds: Vec<ViolationKind> =
            reg.validate().violations.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::DuplicateId));
        assert!(kinds.contains(&ViolationKind::SurfaceWhitespace));
        assert!(kinds.contains(&ViolationKind::SourcedWithoutEvidential));
        assert_eq!(kinds.len(), 3);
    }

    #[test]
    fn numeric_templates_expand_over_grid() {
        let reg = Registry::numeric_builtin();
        assert_eq!(reg.markers().len(), 7);
        assert!(reg.markers().iter().all(|t| t.has_numeric_slot()));
        assert!(reg.validate().is_clean());

        let sure = reg.get("im_pct_sure").unwrap();
        let grid = NumericGrid::default_grid();
        let expanded = expand_numeric(sure, &grid).unwrap();
        assert_eq!(expanded.len(), 7);
        assert_eq!(expanded[0].id, "im_pct_sure_0");
        assert_eq!(expanded[0].surface, "I'm 0% sure it's");
        assert_eq!(expanded[6].surface, "I'm 100% sure it's");
        assert!(expanded.iter().all(|t| !t.has_numeric_slot()));
        assert!(expanded.iter().all(|t| t.features == sure.features));
    }

    #[test]
    fn numeric_expansion_requires_a_slot() {
        let reg = Registry::builtin();
        let plain = reg.get("i_think").unwrap();
        assert!(matches!(
            instantiate_numeric(plain, 50),
            Err(TypologyError::NoNumericSlot(_))
        ));
    }

    #[test]
    fn grid_construction_enforces_bounds_and_order() {
        assert!(NumericGrid::new(vec![]).is_err());
        assert!(NumericGrid::new(vec![10, 10]).is_err());
        assert!(NumericGrid::new(vec![30, 10]).is_err());
        assert!(NumericGrid::new(vec![0, 101]).is_err());
        assert_eq!(
            NumericGrid::default_grid().values(),
            &[0, 10, 30, 50, 70, 90, 100]
        );
    }

    #[test]
    fn feature_predicate_matches_partial_patterns() {
        let f = LinguisticFeatures {
            strength: Strength::Weakener,
            shield: Shield::Plausibility,
            evidential: false,
            factive: false,
            sourced: false,
            first_person: true,
        };
        assert!(FeaturePredicate::default().matches(&f));
        let p = FeaturePredicate {
            strength: Some(Strength::Weakener),
            first_person: Some(true),
            ..Default::default()
        };
        assert!(p.matches(&f));
        let q = FeaturePredicate {
            factive: Some(true),
            ..Default::default()
        };
        assert!(!q.matches(&f));
    }

    fn arb_features() -> impl Strategy<Value = LinguisticFeatures> {
        (
            prop_oneof![
                Just(Strength::Weakener),
                Just(Strength::Strengthener),
                Just(Strength::Neutral)
            ],
            prop_oneof![Just(Shield::Plausibility), Just(Shield::None)],
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(
                |(strength, shield, evidential, factive, sourced, first_person)| {
                    LinguisticFeatures {
                        strength,
                        shield,
                        evidential,
                        factive,
                        sourced,
                        first_person,
                    }
                },
            )
    }

    proptest! {
        #[test]
        fn filter_is_idempotent_and_order_preserving(
            feats in proptest::collection::vec(arb_features(), 0..40),
            factive_wanted in any::<bool>(),
        ) {
            let templates: Vec<MarkerTemplate> = feats
                .iter()
                .enumerate()
                .map(|(i, f)| MarkerTemplate {
                    id: format!("t{i}"),
                    surface: format!("T{i} it's"),
                    features: *f,
                })
                .collect();
            let pred = |f: &LinguisticFeatures| f.factive == factive_wanted;
            let once = filter_templates(&templates, pred);
            let twice = filter_templates(&once, pred);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.iter().all(|t| pred(&t.features)));
            // order preserved: ids strictly increasing by original index
            let idx: Vec<usize> = once
                .iter()
                .map(|t| t.id[1..].parse::<usize>().unwrap())
                .collect();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            // nothing satisfying the predicate was dropped
            let expected = templates.iter().filter(|t| pred(&t.features)).count();
            prop_assert_eq!(once.len(), expected);
        }
    }
}
