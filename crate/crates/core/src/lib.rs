//! Probing library for studying how expressions of certainty and uncertainty
//! in a prompt change language-model question-answering behaviour.
//!
//! The pipeline, end to end:
//!
//! 1. [`typology`] — a registry of epistemic marker templates, each coded
//!    along six linguistic feature axes (strength, shield, evidentiality,
//!    factivity, source attribution, first person).
//! 2. [`qa`] — short-answer QA items with alias sets, loaders and samplers.
//! 3. [`backend`] — language-model completion providers: a deterministic
//!    mock, an OpenAI-style HTTP client, and a content-addressed disk cache.
//! 4. [`probe`] — prompt construction and experiment execution (every item
//!    crossed with every marker template plus the bare control prompt).
//! 5. [`scoring`] — per-record correctness/probability/entropy metrics and
//!    grouped aggregation with bootstrap confidence intervals and t-tests.
//! 6. [`corpus`] — streaming frequency analysis of marker phrases and stated
//!    percentages in large JSONL corpora.
//! 7. [`teach`] — few-shot prompt builders that pair answers with certainty
//!    markers according to answer probability, and emission scoring.
//! 8. [`report`] — CSV/JSON report emission and small SVG charts.
//!
//! Heavy loops (corpus scans, scoring, bootstrap) are data-parallel via
//! rayon when the default `parallel` feature is on; every such entry point
//! has a sequential twin so the two can be compared or the dependency
//! dropped entirely.

pub mod backend;
pub mod corpus;
pub mod exec;
pub mod probe;
pub mod qa;
pub mod report;
pub mod scoring;
pub mod teach;
pub mod typology;
