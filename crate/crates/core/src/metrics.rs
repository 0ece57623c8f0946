//! Confusion matrices, derived metrics, ROC curves and AUC.
//!
//! The decision rule is `score >= threshold -> positive` by default; the
//! strict variant (`>`) is available behind [`ThresholdMode`]. AUC is the
//! rank-based (Mann-Whitney) estimate with ties counted 0.5; the trapezoidal
//! integral of the ROC curve is retained as an independent cross-check route.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

/// Decision rule at the threshold boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// `score >= threshold` is positive (default).
    #[default]
    Ge,
    /// `score > threshold` is positive.
    Gt,
}

impl ThresholdMode {
    pub fn is_positive(self, score: f64, threshold: f64) -> bool {
        match self {
            ThresholdMode::Ge => score >= threshold,
            ThresholdMode::Gt => score > threshold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::Ge => "ge",
            ThresholdMode::Gt => "gt",
        }
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ge" => Ok(ThresholdMode::Ge),
            "gt" => Ok(ThresholdMode::Gt),
            other => Err(Error::UnknownThresholdMode(other.to_string())),
        }
    }
}

/// TP/FN/FP/TN counts of a binary decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fn_, fp, tn }
    }

    /// Number of positive-class records evaluated.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Number of negative-class records evaluated.
    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }
}

/// The derived metric set of a confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSet {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
}

/// Tallies predictions at `threshold` against labels.
pub fn confusion_at(scored: &[(f64, Label)], threshold: f64, mode: ThresholdMode) -> Result<ConfusionMatrix> {
    if scored.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut c = ConfusionMatrix::new(0, 0, 0, 0);
    for &(score, label) in scored {
        match (mode.is_positive(score, threshold), label.is_positive()) {
            (true, true) => c.tp += 1,
            (false, true) => c.fn_ += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Derives sensitivity/specificity/accuracy/F1/precision from counts.
///
/// Both classes must be present. F1 (and precision) with a zero denominator
/// is defined as 0: predicting no positives is counted as total failure to
/// detect, not left undefined.
pub fn metrics_from_confusion(c: &ConfusionMatrix) -> Result<MetricSet> {
    if c.positives() == 0 {
        return Err(Error::UndefinedMetric {
            metric: "sensitivity",
            reason: "no positive-class records",
        });
    }
    if c.negatives() == 0 {
        return Err(Error::UndefinedMetric {
            metric: "specificity",
            reason: "no negative-class records",
        });
    }
    let (tp, fn_, fp, tn) = (c.tp as f64, c.fn_ as f64, c.fp as f64, c.tn as f64);
    let f1_denom = 2.0 * tp + fp + fn_;
    Ok(MetricSet {
        sensitivity: tp / (tp + fn_),
        specificity: tn / (tn + fp),
        accuracy: (tp + tn) / (tp + fn_ + fp + tn),
        f1: if f1_denom == 0.0 { 0.0 } else { 2.0 * tp / f1_denom },
        precision: if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) },
    })
}

/// One operating point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Ordered ROC operating points plus the AUC.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// `threshold,fpr,tpr` rows, one per operating point. The sentinel
    /// threshold above all scores serializes as `inf`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }

    /// Trapezoidal area under the curve. Kept as an independent cross-check
    /// of the rank-based [`auc`]; the two agree to floating-point precision.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
            .sum()
    }
}

/// Sweeps thresholds over the distinct observed scores (descending), plus a
/// sentinel above all scores, and returns the resulting operating points.
///
/// Tied scores move together: one point per distinct score. The first point
/// is (0,0) and the last (1,1).
pub fn roc_points(scored: &[(f64, Label)]) -> Result<RocCurve> {
    let auc = auc(scored)?;
    let positives = scored.iter().filter(|(_, l)| l.is_positive()).count() as f64;
    let negatives = scored.len() as f64 - positives;

    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let score = scored[order[i]].0;
        while i < order.len() && scored[order[i]].0 == score {
            if scored[order[i]].1.is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: score,
            fpr: fp as f64 / negatives,
            tpr: tp as f64 / positives,
        });
    }
    Ok(RocCurve { points, auc })
}

/// Rank-based (Mann-Whitney) AUC with average ranks for ties.
///
/// Equals the fraction of positive-negative pairs where the positive scores
/// higher, ties counted 0.5, and the trapezoidal area under [`roc_points`].
pub fn auc(scored: &[(f64, Label)]) -> Result<f64> {
    let positives = scored.iter().filter(|(_, l)| l.is_positive()).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric {
            metric: "auc",
            reason: "input contains a single class",
        });
    }

    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));

    // Average rank per tie group; sum the ranks of the positives.
    let mut pos_rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let score = scored[order[i]].0;
        let start = i;
        let mut group_pos = 0u64;
        while i < order.len() && scored[order[i]].0 == score {
            if scored[order[i]].1.is_positive() {
                group_pos += 1;
            }
            i += 1;
        }
        // 1-based ranks start+1 ..= i, averaged.
        let avg_rank = (start + 1 + i) as f64 / 2.0;
        pos_rank_sum += avg_rank * group_pos as f64;
    }

    let p = positives as f64;
    let n = negatives as f64;
    let u = pos_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tp={} fn={} fp={} tn={}", self.tp, self.fn_, self.fp, self.tn)
    }
}
