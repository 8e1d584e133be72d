//! Report emission: CSV/JSON tables and simple SVG charts.
//!
//! Every function here is a pure function of already-scored results or
//! already-counted corpus reports — report generation never talks to a
//! model backend.

use crate::corpus::{normalize_rates, CountReport, PctHistogram, Section};
use crate::scoring::{
    aggregate_group, ece, FeatureAggregate, FeatureComparison, ScoredResult, ScoringError,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("nothing to report")]
    Empty,
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("corpus: {0}")]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Feature-level report: per-group aggregates, optionally one two-group
/// significance comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureReport {
    pub groups: Vec<FeatureAggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<FeatureComparison>,
}

impl FeatureReport {
    pub fn from_comparison(cmp: FeatureComparison) -> Self {
        FeatureReport {
            groups: vec![cmp.a.clone(), cmp.b.clone()],
            comparison: Some(cmp),
        }
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

/// Write the aggregate table with the fixed column set
/// `group,n,accuracy,ci_low,ci_high,p_value`. Groups that belong to the
/// comparison carry its p-value; others leave the column empty.
pub fn write_aggregates_csv<W: Write>(
    writer: W,
    report: &FeatureReport,
) -> Result<(), ReportError> {
    if report.groups.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "n", "accuracy", "ci_low", "ci_high", "p_value"])?;
    for g in &report.groups {
        let p_value = report
            .comparison
            .as_ref()
            .filter(|c| c.a.group == g.group || c.b.group == g.group)
            .map(|c| fmt_f64(c.p_value))
            .unwrap_or_default();
        w.write_record([
            g.group.clone(),
            g.n.to_string(),
            fmt_f64(g.accuracy),
            fmt_f64(g.ci_low),
            fmt_f64(g.ci_high),
            p_value,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Serialize a feature report as pretty JSON.
pub fn write_report_json<W: Write>(writer: W, report: &FeatureReport) -> Result<(), ReportError> {
    if report.groups.is_empty() {
        return Err(ReportError::Empty);
    }
    serde_json::to_writer_pretty(writer, report)?;
    Ok(())
}

/// Per-template accuracy table row.
pub type TemplateRow = FeatureAggregate;

/// Aggregate results per template, sorted by descending accuracy with ties
/// broken by template id.
pub fn template_rows(
    results: &[ScoredResult],
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<TemplateRow>, ReportError> {
    let mut by_template: BTreeMap<&str, Vec<&ScoredResult>> = BTreeMap::new();
    for r in results {
        by_template.entry(&r.template_id).or_default().push(r);
    }
    if by_template.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut rows = Vec::with_capacity(by_template.len());
    for (i, (template_id, group)) in by_template.into_iter().enumerate() {
        rows.push(aggregate_group(
            template_id,
            &group,
            n_resamples,
            seed.wrapping_add(i as u64),
        )?);
    }
    rows.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then_with(|| a.group.cmp(&b.group))
    });
    Ok(rows)
}

/// First `k` rows of a sorted template table.
pub fn top_templates(rows: &[TemplateRow], k: usize) -> &[TemplateRow] {
    &rows[..rows.len().min(k)]
}

/// One point of a per-template numeric-certainty curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PctPoint {
    pub pct: u8,
    pub n: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_prob_on_gold: Option<f64>,
}

/// Numeric-certainty report: accuracy curves over the stated-percentage
/// grid per template family, with per-family and overall calibration error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NumericReport {
    pub curves: BTreeMap<String, Vec<PctPoint>>,
    pub ece_per_template: BTreeMap<String, f64>,
    pub ece_overall: f64,
}

/// Strip the trailing `_{pct}` suffix a numeric instantiation appended.
pub fn numeric_base_id(template_id: &str, stated_pct: u8) -> String {
    template_id
        .strip_suffix(&format!("_{stated_pct}"))
        .unwrap_or(template_id)
        .to_string()
}

/// Build the numeric report from scored results that carry `stated_pct`.
/// Failed results are excluded; results without a stated percentage are
/// ignored.
pub fn numeric_report(results: &[ScoredResult]) -> Result<NumericReport, ReportError> {
    let mut by_key: BTreeMap<(String, u8), Vec<&ScoredResult>> = BTreeMap::new();
    let mut by_template: BTreeMap<String, Vec<(u8, bool)>> = BTreeMap::new();
    let mut all: Vec<(u8, bool)> = Vec::new();
    for r in results.iter().filter(|r| !r.failed) {
        let Some(pct) = r.stated_pct else { continue };
        let base = numeric_base_id(&r.template_id, pct);
        by_key.entry((base.clone(), pct)).or_default().push(r);
        by_template.entry(base).or_default().push((pct, r.correct));
        all.push((pct, r.correct));
    }
    if all.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut curves: BTreeMap<String, Vec<PctPoint>> = BTreeMap::new();
    for ((base, pct), group) in by_key {
        let n = group.len();
        let correct = group.iter().filter(|r| r.correct).count();
        let probs: Vec<f64> = group.iter().filter_map(|r| r.prob_on_gold).collect();
        curves.entry(base).or_default().push(PctPoint {
            pct,
            n,
            accuracy: correct as f64 / n as f64,
            mean_prob_on_gold: (!probs.is_empty())
                .then(|| probs.iter().sum::<f64>() / probs.len() as f64),
        });
    }
    for points in curves.values_mut() {
        points.sort_by_key(|p| p.pct);
    }
    let ece_per_template = by_template
        .into_iter()
        .map(|(base, pairs)| Ok((base, ece(&pairs)?)))
        .collect::<Result<BTreeMap<_, _>, ScoringError>>()?;
    Ok(NumericReport {
        curves,
        ece_per_template,
        ece_overall: ece(&all).map_err(ScoringError::from)?,
    })
}

/// Write numeric curves as CSV: `template,pct,n,accuracy,mean_prob_on_gold`.
pub fn write_numeric_csv<W: Write>(writer: W, report: &NumericReport) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["template", "pct", "n", "accuracy", "mean_prob_on_gold"])?;
    for (template, points) in &report.curves {
        for p in points {
            w.write_record([
                template.clone(),
                p.pct.to_string(),
                p.n.to_string(),
                fmt_f64(p.accuracy),
                p.mean_prob_on_gold.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write corpus counts in the wide question/answer rate table shape:
/// `pattern,question_instances,question_per_thousand_posts,question_per_million_words,answer_instances,answer_per_thousand_posts,answer_per_million_words`.
pub fn write_corpus_csv<W: Write>(writer: W, report: &CountReport) -> Result<(), ReportError> {
    if report.counts.is_empty() {
        return Err(ReportError::Empty);
    }
    let rows = normalize_rates(report)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "pattern",
        "question_instances",
        "question_per_thousand_posts",
        "question_per_million_words",
        "answer_instances",
        "answer_per_thousand_posts",
        "answer_per_million_words",
    ])?;
    for pattern in report.counts.keys() {
        let find = |section: Section| {
            rows.iter()
                .find(|r| &r.pattern == pattern && r.section == section.label())
        };
        let fmt_cell = |row: Option<&crate::corpus::RateRow>,
                        instances: u64|
         -> (String, String, String) {
            match row {
                Some(r) => (
                    r.instances.to_string(),
                    format!("{:.4}", r.per_thousand_posts),
                    format!("{:.4}", r.per_million_words),
                ),
                None => (instances.to_string(), String::new(), String::new()),
            }
        };
        let q_inst = report.instances(pattern, Section::Question);
        let a_inst = report.instances(pattern, Section::Answer);
        let (qi, qp, qw) = fmt_cell(find(Section::Question), q_inst);
        let (ai, ap, aw) = fmt_cell(find(Section::Answer), a_inst);
        w.write_record([pattern.clone(), qi, qp, qw, ai, ap, aw])?;
    }
    w.flush()?;
    Ok(())
}

/// Write a percentage histogram as `value,count` rows.
pub fn write_histogram_csv<W: Write>(
    writer: W,
    hist: &PctHistogram,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["value", "count"])?;
    for (value, count) in hist.bins.iter().enumerate() {
        w.write_record([value.to_string(), count.to_string()])?;
    }
    w.write_record(["out_of_range", &hist.out_of_range.to_string()])?;
    w.flush()?;
    Ok(())
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 420.0;
const MARGIN: f64 = 50.0;

fn svg_open(title: &str) -> String {
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" "#,
            r#"viewBox="0 0 {w} {h}" font-family="monospace" font-size="11">"#,
            "\n",
            r#"<rect width="{w}" height="{h}" fill="white"/>"#,
            "\n",
            r#"<text x="{tx}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
            "\n"
        ),
        w = SVG_W,
        h = SVG_H,
        tx = SVG_W / 2.0,
        title = xml_escape(title),
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn y_of(value: f64, max: f64) -> f64 {
    let span = SVG_H - 2.0 * MARGIN;
    SVG_H - MARGIN - (value / max).clamp(0.0, 1.0) * span
}

/// Bar chart of group accuracies with CI whiskers.
pub fn svg_feature_bars(title: &str, groups: &[FeatureAggregate]) -> Result<String, ReportError> {
    if groups.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut out = svg_open(title);
    let plot_w = SVG_W - 2.0 * MARGIN;
    let slot = plot_w / groups.len() as f64;
    let bar_w = (slot * 0.6).min(80.0);
    writeln!(
        out,
        r#"<line x1="{m}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#,
        m = MARGIN,
        y0 = SVG_H - MARGIN,
        x1 = SVG_W - MARGIN
    )
    .unwrap();
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = y_of(v, 1.0);
        writeln!(
            out,
            r#"<text x="{x}" y="{y}" text-anchor="end">{v:.1}</text>"#,
            x = MARGIN - 6.0,
            y = y + 4.0
        )
        .unwrap();
        writeln!(
            out,
            r##"<line x1="{m}" y1="{y}" x2="{x1}" y2="{y}" stroke="#dddddd"/>"##,
            m = MARGIN,
            x1 = SVG_W - MARGIN
        )
        .unwrap();
    }
    for (i, g) in groups.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let x = cx - bar_w / 2.0;
        let y = y_of(g.accuracy, 1.0);
        let h = (SVG_H - MARGIN) - y;
        writeln!(
            out,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{h:.2}" fill="#4878a8"/>"##
        )
        .unwrap();
        let (y_lo, y_hi) = (y_of(g.ci_low, 1.0), y_of(g.ci_high, 1.0));
        writeln!(
            out,
            r#"<line x1="{cx:.2}" y1="{y_lo:.2}" x2="{cx:.2}" y2="{y_hi:.2}" stroke="black"/>"#
        )
        .unwrap();
        for yw in [y_lo, y_hi] {
            writeln!(
                out,
                r#"<line x1="{x1:.2}" y1="{yw:.2}" x2="{x2:.2}" y2="{yw:.2}" stroke="black"/>"#,
                x1 = cx - 6.0,
                x2 = cx + 6.0
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{cx:.2}" y="{ty}" text-anchor="middle">{label}</text>"#,
            ty = SVG_H - MARGIN + 16.0,
            label = xml_escape(&g.group)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Accuracy-vs-stated-percentage line chart, one polyline per template.
pub fn svg_numeric_curves(title: &str, report: &NumericReport) -> Result<String, ReportError> {
    if report.curves.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut out = svg_open(title);
    let plot_w = SVG_W - 2.0 * MARGIN;
    let x_of = |pct: u8| MARGIN + plot_w * f64::from(pct) / 100.0;
    writeln!(
        out,
        r#"<line x1="{m}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#,
        m = MARGIN,
        y0 = SVG_H - MARGIN,
        x1 = SVG_W - MARGIN
    )
    .unwrap();
    for pct in [0u8, 25, 50, 75, 100] {
        writeln!(
            out,
            r#"<text x="{x:.2}" y="{y}" text-anchor="middle">{pct}%</text>"#,
            x = x_of(pct),
            y = SVG_H - MARGIN + 16.0
        )
        .unwrap();
    }
    let palette = [
        "#4878a8", "#a84848", "#48a868", "#a88a48", "#7848a8", "#48a0a8", "#a848a0",
    ];
    for (i, (template, points)) in report.curves.iter().enumerate() {
        let color = palette[i % palette.len()];
        let path: Vec<String> = points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x_of(p.pct), y_of(p.accuracy, 1.0)))
            .collect();
        writeln!(
            out,
            r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts = path.join(" ")
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{x}" y="{y}" fill="{color}">{label}</text>"#,
            x = SVG_W - MARGIN + 4.0,
            y = MARGIN + 14.0 * i as f64,
            label = xml_escape(template)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Histogram of stated percentages as an SVG bar chart (log-free, raw
/// counts scaled to the tallest bin).
pub fn svg_histogram(title: &str, hist: &PctHistogram) -> Result<String, ReportError> {
    let max = hist.bins.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(ReportError::Empty);
    }
    let mut out = svg_open(title);
    let plot_w = SVG_W - 2.0 * MARGIN;
    let bar_w = plot_w / 101.0;
    for (value, &count) in hist.bins.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let x = MARGIN + bar_w * value as f64;
        let y = y_of(count as f64, max as f64);
        let h = (SVG_H - MARGIN) - y;
        writeln!(
            out,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="#4878a8"><title>{value}%: {count}</title></rect>"##,
            w = (bar_w * 0.9).max(1.0),
        )
        .unwrap();
    }
    for pct in [0u8, 25, 50, 75, 100] {
        writeln!(
            out,
            r#"<text x="{x:.2}" y="{y}" text-anchor="middle">{pct}%</text>"#,
            x = MARGIN + bar_w * (f64::from(pct) + 0.5),
            y = SVG_H - MARGIN + 16.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}
