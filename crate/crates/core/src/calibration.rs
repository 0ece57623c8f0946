//! Decision-threshold calibration on the validation split.
//!
//! The operating threshold is chosen by exhaustive search over the distinct
//! observed validation scores (plus a sentinel meaning "predict all
//! negative"), maximizing F1. The winning threshold is frozen into a
//! [`CalibrationArtifact`] together with the evidence that produced it.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label, Split};
use crate::error::{Error, Result};
use crate::metrics::{metrics_from_confusion, ConfusionMatrix, ThresholdMode};
use crate::voting::{aggregate_dataset, VoteStrategy};

/// Whether an operation works on per-image scores or per-subject vote scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Image,
    Subject,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Image => "image",
            Level::Subject => "subject",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Level::Image),
            "subject" => Ok(Level::Subject),
            other => Err(Error::UnknownLevel(other.to_string())),
        }
    }
}

/// A frozen decision threshold with the strategy, level and validation
/// evidence that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub threshold: f64,
    pub achieved_f1: f64,
    pub level: Level,
    pub strategy: Option<VoteStrategy>,
    pub validation_counts: ConfusionMatrix,
    pub created_from: String,
}

impl CalibrationArtifact {
    /// Stable key used to index artifacts in reports: `image`,
    /// `subject_max` or `subject_mean`.
    pub fn key(&self) -> String {
        match (self.level, self.strategy) {
            (Level::Image, _) => "image".to_string(),
            (Level::Subject, Some(s)) => format!("subject_{s}"),
            (Level::Subject, None) => "subject".to_string(),
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<CalibrationArtifact> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn load(path: &Path) -> Result<CalibrationArtifact> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_json_string().as_bytes())?;
        Ok(())
    }
}

/// Candidate thresholds for `scored`: the distinct observed scores, each
/// paired with the confusion matrix it yields under `mode`, in descending
/// threshold order. The all-negative sentinel (conceptually above every
/// score) is prepended with zero predicted positives.
fn candidate_sweep(scored: &[(f64, Label)], mode: ThresholdMode) -> Vec<(f64, ConfusionMatrix)> {
    let positives = scored.iter().filter(|(_, l)| l.is_positive()).count() as u64;
    let negatives = scored.len() as u64 - positives;

    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));

    let confusion = |tp: u64, fp: u64| ConfusionMatrix::new(tp, positives - tp, fp, negatives - fp);

    let mut candidates = vec![(f64::INFINITY, confusion(0, 0))];
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let score = scored[order[i]].0;
        // Under `gt` the candidate at `score` predicts only strictly greater
        // scores positive, so the tie group itself is not yet counted.
        if mode == ThresholdMode::Gt {
            candidates.push((score, confusion(tp, fp)));
        }
        while i < order.len() && scored[order[i]].0 == score {
            if scored[order[i]].1.is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if mode == ThresholdMode::Ge {
            candidates.push((score, confusion(tp, fp)));
        }
    }
    candidates
}

/// Exhaustive F1-maximizing threshold search.
///
/// Candidates are the distinct observed scores plus the all-negative
/// sentinel; ties are broken by the largest threshold. The sentinel has no
/// finite threshold, so it is never returned: whenever every candidate ties
/// with it at F1 = 0 (possible only under `gt` with degenerate data), the
/// largest observed score wins.
pub fn best_f1_threshold(
    scored: &[(f64, Label)],
    mode: ThresholdMode,
) -> Result<(f64, f64, ConfusionMatrix)> {
    if scored.is_empty() {
        return Err(Error::EmptyInput);
    }
    let positives = scored.iter().filter(|(_, l)| l.is_positive()).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric { metric: "f1", reason: "no positive-class records" });
    }
    if positives == scored.len() {
        return Err(Error::UndefinedMetric {
            metric: "specificity",
            reason: "no negative-class records",
        });
    }

    let mut best: Option<(f64, f64, ConfusionMatrix)> = None;
    for (threshold, counts) in candidate_sweep(scored, mode) {
        if !threshold.is_finite() {
            continue;
        }
        let f1 = metrics_from_confusion(&counts)?.f1;
        // Descending sweep: strictly-greater keeps the largest maximizer.
        if best.as_ref().is_none_or(|(_, best_f1, _)| f1 > *best_f1) {
            best = Some((threshold, f1, counts));
        }
    }
    Ok(best.expect("at least one finite candidate"))
}

/// Calibrates a threshold on the validation split of `d`.
///
/// Image level searches over validation records directly; subject level
/// first aggregates validation subjects with the given strategy. Each
/// (level, strategy) pair is calibrated independently.
pub fn calibrate(
    d: &Dataset,
    level: Level,
    strategy: Option<VoteStrategy>,
    mode: ThresholdMode,
) -> Result<CalibrationArtifact> {
    if level == Level::Subject && strategy.is_none() {
        return Err(Error::MissingStrategy);
    }
    let scored: Vec<(f64, Label)> = match level {
        Level::Image => d
            .records
            .iter()
            .filter(|r| r.split == Split::Validation)
            .map(|r| (r.score, r.label))
            .collect(),
        Level::Subject => {
            let groups = d.partition_and_group(Some(Split::Validation), None);
            aggregate_dataset(&groups, strategy.expect("checked above"))?
                .into_iter()
                .map(|s| (s.score, s.label))
                .collect()
        }
    };
    if scored.is_empty() {
        return Err(Error::MissingValidationSplit);
    }
    let (threshold, achieved_f1, validation_counts) = best_f1_threshold(&scored, mode)?;
    Ok(CalibrationArtifact {
        threshold,
        achieved_f1,
        level,
        strategy: if level == Level::Subject { strategy } else { None },
        validation_counts,
        created_from: d.provenance.clone(),
    })
}
