//! Performance and confusion reports stratified by cohort and level, plus
//! ROC curve exports.
//!
//! Reports cover the test split of the input dataset: one row per
//! (scope, artifact) pair, where scopes are the dataset's cohorts plus the
//! pooled `Total` and artifacts carry their own level/strategy/threshold.
//! JSON is the canonical encoding; the text tables and the ROC CSV/SVG
//! exports derive from the same data. All outputs are byte-stable given
//! fixed inputs and seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::bootstrap::{bootstrap_all, BootstrapConfig, EvalInput, IntervalEstimate};
use crate::calibration::{CalibrationArtifact, Level};
use crate::dataset::{Dataset, Label, Split, SubjectGroup};
use crate::error::{Error, Result};
use crate::metrics::{self, confusion_at, ConfusionMatrix, RocCurve, ThresholdMode};
use crate::voting::{aggregate_dataset, VoteStrategy};

/// Interval columns of one performance-report row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowMetrics {
    pub auc: IntervalEstimate,
    pub sensitivity: IntervalEstimate,
    pub specificity: IntervalEstimate,
    pub accuracy: IntervalEstimate,
    pub f1: IntervalEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub scope: String,
    pub level: Level,
    pub strategy: Option<VoteStrategy>,
    /// `None` when the scope is not computable (empty or single-class).
    pub metrics: Option<RowMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerformanceReport {
    pub rows: Vec<ReportRow>,
    /// Artifact key (`image`, `subject_max`, `subject_mean`) -> threshold.
    pub thresholds: BTreeMap<String, f64>,
    pub provenance: String,
}

impl PerformanceReport {
    /// Canonical byte encoding shared by the CLI and the HTTP service.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Table-style text rendering with `value (CI%, lower-upper)` cells.
    pub fn render_text(&self, confidence: f64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "performance report: {}", self.provenance);
        for (key, threshold) in &self.thresholds {
            let _ = writeln!(out, "threshold[{key}] = {threshold}");
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<12} {:<8} {:<9} {:<28} {:<28} {:<28} {:<28} {:<28}",
            "scope", "level", "strategy", "auc", "sensitivity", "specificity", "accuracy", "f1"
        );
        for row in &self.rows {
            let strategy = row.strategy.map_or("-", |s| s.as_str());
            match &row.metrics {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "{:<12} {:<8} {:<9} {:<28} {:<28} {:<28} {:<28} {:<28}",
                        row.scope,
                        row.level,
                        strategy,
                        format_interval(&m.auc, confidence),
                        format_interval(&m.sensitivity, confidence),
                        format_interval(&m.specificity, confidence),
                        format_interval(&m.accuracy, confidence),
                        format_interval(&m.f1, confidence),
                    );
                }
                None => {
                    let note = row.note.as_deref().unwrap_or("not computable");
                    let _ = writeln!(
                        out,
                        "{:<12} {:<8} {:<9} {}",
                        row.scope, row.level, strategy, note
                    );
                }
            }
        }
        out
    }
}

/// Renders an interval in the `0.913 (95% CI, 0.898-0.927)` notation.
pub fn format_interval(est: &IntervalEstimate, confidence: f64) -> String {
    format!(
        "{:.3} ({}% CI, {:.3}-{:.3})",
        est.point,
        format_confidence_level(confidence),
        est.lower,
        est.upper
    )
}

fn format_confidence_level(confidence: f64) -> String {
    let pct = confidence * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as u32)
    } else {
        format!("{pct}")
    }
}

/// The pooled-total scope name.
pub const TOTAL_SCOPE: &str = "Total";

fn scopes_of(data: &Dataset) -> Vec<(String, Option<String>)> {
    let mut scopes: Vec<(String, Option<String>)> = data
        .cohorts()
        .into_iter()
        .map(|c| (c.clone(), Some(c)))
        .collect();
    scopes.push((TOTAL_SCOPE.to_string(), None));
    scopes
}

fn scored_at_level(
    groups: &[SubjectGroup],
    level: Level,
    strategy: Option<VoteStrategy>,
) -> Result<Vec<(f64, Label)>> {
    match level {
        Level::Image => Ok(groups
            .iter()
            .flat_map(|g| g.scores.iter().map(|(_, s)| (*s, g.label)))
            .collect()),
        Level::Subject => {
            let strategy = strategy.ok_or(Error::MissingStrategy)?;
            Ok(aggregate_dataset(groups, strategy)?
                .into_iter()
                .map(|s| (s.score, s.label))
                .collect())
        }
    }
}

fn single_class(groups: &[SubjectGroup]) -> bool {
    let mut pos = false;
    let mut neg = false;
    for g in groups {
        if g.label.is_positive() {
            pos = true;
        } else {
            neg = true;
        }
    }
    !(pos && neg)
}

/// Builds the Table-2-style report: for each cohort and Total, one row per
/// artifact, with AUC from the scores and the remaining metrics at the
/// artifact's calibrated threshold, each with a bootstrap CI.
///
/// Scopes with no test records or a single class yield a row marked not
/// computable instead of failing the report.
pub fn build_performance_report(
    data: &Dataset,
    artifacts: &[CalibrationArtifact],
    cfg: &BootstrapConfig,
    mode: ThresholdMode,
) -> Result<PerformanceReport> {
    cfg.validate()?;
    if artifacts.is_empty() {
        return Err(Error::InvalidConfig("no calibration artifacts supplied".into()));
    }
    let mut rows = Vec::new();
    for (scope, cohort) in scopes_of(data) {
        let groups = data.partition_and_group(Some(Split::Test), cohort.as_deref());
        for artifact in artifacts {
            let mut row = ReportRow {
                scope: scope.clone(),
                level: artifact.level,
                strategy: artifact.strategy,
                metrics: None,
                note: None,
            };
            if groups.is_empty() {
                row.note = Some("not computable: no test records in scope".to_string());
            } else if single_class(&groups) {
                row.note = Some("not computable: single class in scope".to_string());
            } else {
                let input = EvalInput {
                    groups: &groups,
                    level: artifact.level,
                    strategy: artifact.strategy,
                    threshold: artifact.threshold,
                    mode,
                };
                let intervals = bootstrap_all(&input, cfg)?;
                row.metrics = Some(RowMetrics {
                    auc: intervals.auc,
                    sensitivity: intervals.sensitivity,
                    specificity: intervals.specificity,
                    accuracy: intervals.accuracy,
                    f1: intervals.f1,
                });
            }
            rows.push(row);
        }
    }
    let thresholds = artifacts.iter().map(|a| (a.key(), a.threshold)).collect();
    Ok(PerformanceReport { rows, thresholds, provenance: data.provenance.clone() })
}

/// One Table-3-style confusion row: counts plus class-normalized
/// percentages rounded to one decimal. A percentage pair is `None` when its
/// class is absent from the scope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionRow {
    pub scope: String,
    pub level: Level,
    pub strategy: Option<VoteStrategy>,
    pub counts: ConfusionMatrix,
    /// `[P(%) predicted positive, N(%) predicted negative]` of the positive class.
    pub positive_pct: Option<[f64; 2]>,
    /// `[P(%), N(%)]` of the negative class.
    pub negative_pct: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionReport {
    pub rows: Vec<ConfusionRow>,
    /// Scopes omitted entirely (no test records), one notice each.
    pub notices: Vec<String>,
    pub provenance: String,
}

impl ConfusionReport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "confusion report: {}", self.provenance);
        let _ = writeln!(
            out,
            "{:<12} {:<8} {:<9} {:<6} {:>6} {:>6} {:>7} {:>7}",
            "scope", "level", "strategy", "class", "P", "N", "P(%)", "N(%)"
        );
        for row in &self.rows {
            let strategy = row.strategy.map_or("-", |s| s.as_str());
            let pct = |v: Option<[f64; 2]>, i: usize| match v {
                Some(p) => format!("{:.1}", p[i]),
                None => "-".to_string(),
            };
            let _ = writeln!(
                out,
                "{:<12} {:<8} {:<9} {:<6} {:>6} {:>6} {:>7} {:>7}",
                row.scope,
                row.level,
                strategy,
                "P",
                row.counts.tp,
                row.counts.fn_,
                pct(row.positive_pct, 0),
                pct(row.positive_pct, 1),
            );
            let _ = writeln!(
                out,
                "{:<12} {:<8} {:<9} {:<6} {:>6} {:>6} {:>7} {:>7}",
                "", "", "", "N",
                row.counts.fp,
                row.counts.tn,
                pct(row.negative_pct, 0),
                pct(row.negative_pct, 1),
            );
        }
        for notice in &self.notices {
            let _ = writeln!(out, "notice: {notice}");
        }
        out
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Builds the Table-3-style confusion report at each artifact's threshold.
pub fn build_confusion_report(
    data: &Dataset,
    artifacts: &[CalibrationArtifact],
    mode: ThresholdMode,
) -> Result<ConfusionReport> {
    if artifacts.is_empty() {
        return Err(Error::InvalidConfig("no calibration artifacts supplied".into()));
    }
    let mut rows = Vec::new();
    let mut notices = Vec::new();
    for (scope, cohort) in scopes_of(data) {
        let groups = data.partition_and_group(Some(Split::Test), cohort.as_deref());
        if groups.is_empty() {
            notices.push(format!("scope `{scope}`: no test records; rows omitted"));
            continue;
        }
        for artifact in artifacts {
            let scored = scored_at_level(&groups, artifact.level, artifact.strategy)?;
            let counts = confusion_at(&scored, artifact.threshold, mode)?;
            let class_pct = |a: u64, b: u64| {
                let total = a + b;
                (total > 0).then(|| {
                    [round1(100.0 * a as f64 / total as f64), round1(100.0 * b as f64 / total as f64)]
                })
            };
            let positive_pct = class_pct(counts.tp, counts.fn_);
            let negative_pct = class_pct(counts.fp, counts.tn);
            let note = (positive_pct.is_none() || negative_pct.is_none())
                .then(|| "single class in scope".to_string());
            rows.push(ConfusionRow {
                scope: scope.clone(),
                level: artifact.level,
                strategy: artifact.strategy,
                counts,
                positive_pct,
                negative_pct,
                note,
            });
        }
    }
    Ok(ConfusionReport { rows, notices, provenance: data.provenance.clone() })
}

/// ROC curve export for one slice: the CSV exchange format plus an SVG
/// rendering over the unit square.
#[derive(Debug, Clone)]
pub struct RocExport {
    pub curve: RocCurve,
    pub csv: String,
    pub svg: String,
}

/// Computes the ROC of the test split (optionally one cohort) at the given
/// level and exports it.
pub fn export_roc(
    data: &Dataset,
    level: Level,
    strategy: Option<VoteStrategy>,
    cohort: Option<&str>,
) -> Result<RocExport> {
    let groups = data.partition_and_group(Some(Split::Test), cohort);
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scored = scored_at_level(&groups, level, strategy)?;
    let curve = metrics::roc_points(&scored)?;
    let csv = curve.to_csv_string();
    let svg = render_roc_svg(&curve);
    Ok(RocExport { curve, csv, svg })
}

/// Hand-rolled SVG: unit square with axes, the dashed chance diagonal, the
/// ROC polyline and an AUC annotation. Coordinates are formatted with fixed
/// precision so output bytes are stable.
fn render_roc_svg(curve: &RocCurve) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 48.0;
    let span = SIZE - 2.0 * MARGIN;
    let x = |fpr: f64| MARGIN + fpr * span;
    let y = |tpr: f64| SIZE - MARGIN - tpr * span;

    let mut points = String::new();
    for p in &curve.points {
        let _ = write!(points, "{:.2},{:.2} ", x(p.fpr), y(p.tpr));
    }
    let points = points.trim_end();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    let _ = writeln!(svg, "  <rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "  <rect x=\"{m}\" y=\"{m}\" width=\"{span}\" height=\"{span}\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>",
        m = MARGIN,
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"#999\" stroke-width=\"1\" stroke-dasharray=\"6,4\"/>",
        x0 = x(0.0),
        y0 = y(0.0),
        x1 = x(1.0),
        y1 = y(1.0),
    );
    let _ = writeln!(
        svg,
        "  <polyline points=\"{points}\" fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\"/>"
    );
    for (tick, anchor) in [(0.0, "0.0"), (0.5, "0.5"), (1.0, "1.0")] {
        let _ = writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{anchor}</text>",
            x(tick),
            SIZE - MARGIN + 18.0,
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{anchor}</text>",
            MARGIN - 8.0,
            y(tick) + 4.0,
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">false positive rate</text>",
        SIZE / 2.0,
        SIZE - 10.0,
    );
    let _ = writeln!(
        svg,
        "  <text x=\"14\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 14 {mid:.2})\">true positive rate</text>",
        SIZE / 2.0,
        mid = SIZE / 2.0,
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"end\">AUC = {auc:.3}</text>",
        SIZE - MARGIN - 10.0,
        SIZE - MARGIN - 12.0,
        auc = curve.auc,
    );
    svg.push_str("</svg>\n");
    svg
}
