//! Percentile-bootstrap confidence intervals for evaluation metrics.
//!
//! Resampling draws with replacement at the configured unit (photo or whole
//! subject), re-evaluates the metric on each resample, and reports the
//! empirical `(1-confidence)/2` and `1-(1-confidence)/2` percentiles around
//! the full-sample point estimate.
//!
//! Reproducibility contract: the resampling generator is ChaCha8; replicate
//! `i` draws from stream `i` of the configured seed, so replicates can be
//! evaluated in any order or in parallel with bit-identical results on every
//! platform. Percentiles interpolate linearly between order statistics
//! (the `rank = q * (n - 1)` rule).
//!
//! Replicates where the metric is undefined (a class absent from the
//! resample) are excluded and counted rather than redrawn, which would bias
//! the replicate distribution.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Level;
use crate::dataset::{Label, SubjectGroup};
use crate::error::{Error, Result};
use crate::metrics::{auc, confusion_at, metrics_from_confusion, ThresholdMode};
use crate::voting::{aggregate_dataset, VoteStrategy};

/// Fraction of excluded replicates above which callers should warn.
pub const EXCLUSION_WARN_FRACTION: f64 = 0.01;

/// The entity drawn with replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleUnit {
    Photo,
    Subject,
}

impl ResampleUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            ResampleUnit::Photo => "photo",
            ResampleUnit::Subject => "subject",
        }
    }
}

impl fmt::Display for ResampleUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for ResampleUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "photo" => Ok(ResampleUnit::Photo),
            "subject" => Ok(ResampleUnit::Subject),
            other => Err(Error::InvalidConfig(format!(
                "unknown resample unit `{other}` (expected `photo` or `subject`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: u32,
    pub confidence: f64,
    pub seed: u64,
    pub unit: ResampleUnit,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 1000, confidence: 0.95, seed: 0, unit: ResampleUnit::Photo }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(Error::InvalidConfig("replicates must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig("confidence must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// A point estimate with its percentile-bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub excluded_replicates: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Auc,
    Sensitivity,
    Specificity,
    Accuracy,
    F1,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Auc => "auc",
            MetricName::Sensitivity => "sensitivity",
            MetricName::Specificity => "specificity",
            MetricName::Accuracy => "accuracy",
            MetricName::F1 => "f1",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auc" => Ok(MetricName::Auc),
            "sensitivity" => Ok(MetricName::Sensitivity),
            "specificity" => Ok(MetricName::Specificity),
            "accuracy" => Ok(MetricName::Accuracy),
            "f1" => Ok(MetricName::F1),
            other => Err(Error::UnknownMetric(other.to_string())),
        }
    }
}

/// The evaluation slice a bootstrap runs over: subject groups plus the
/// level/strategy/threshold context needed to score them.
#[derive(Debug, Clone, Copy)]
pub struct EvalInput<'a> {
    pub groups: &'a [SubjectGroup],
    pub level: Level,
    /// Required when `level` is `Subject`.
    pub strategy: Option<VoteStrategy>,
    /// Decision threshold for the confusion-based metrics (AUC ignores it).
    pub threshold: f64,
    pub mode: ThresholdMode,
}

/// Intervals for all five supported metrics, evaluated over one shared set
/// of resamples (so e.g. sensitivity and specificity come from the same
/// replicate draws).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricIntervals {
    pub auc: IntervalEstimate,
    pub sensitivity: IntervalEstimate,
    pub specificity: IntervalEstimate,
    pub accuracy: IntervalEstimate,
    pub f1: IntervalEstimate,
}

impl MetricIntervals {
    pub fn get(&self, metric: MetricName) -> IntervalEstimate {
        match metric {
            MetricName::Auc => self.auc,
            MetricName::Sensitivity => self.sensitivity,
            MetricName::Specificity => self.specificity,
            MetricName::Accuracy => self.accuracy,
            MetricName::F1 => self.f1,
        }
    }
}

/// Bootstrap interval for a single named metric.
pub fn bootstrap_ci(
    input: &EvalInput<'_>,
    metric: MetricName,
    cfg: &BootstrapConfig,
) -> Result<IntervalEstimate> {
    Ok(bootstrap_all(input, cfg)?.get(metric))
}

/// Bootstrap intervals for all five metrics over one shared resample set.
pub fn bootstrap_all(input: &EvalInput<'_>, cfg: &BootstrapConfig) -> Result<MetricIntervals> {
    cfg.validate()?;
    if input.groups.iter().all(|g| g.scores.is_empty()) {
        return Err(Error::EmptyInput);
    }
    if input.level == Level::Subject && input.strategy.is_none() {
        return Err(Error::MissingStrategy);
    }

    let view = FlatView::build(input)?;
    let points = point_estimates(input)?;

    let replicates: Vec<Option<RepMetrics>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            view.evaluate_replicate(&mut rng, input, cfg.unit)
        })
        .collect();

    let excluded = replicates.iter().filter(|r| r.is_none()).count() as u32;
    if excluded == cfg.replicates {
        return Err(Error::AllReplicatesExcluded(cfg.replicates));
    }

    let alpha = 1.0 - cfg.confidence;
    let interval = |extract: fn(&RepMetrics) -> f64, point: f64| {
        let mut values: Vec<f64> =
            replicates.iter().flatten().map(extract).collect();
        values.sort_by(f64::total_cmp);
        IntervalEstimate {
            point,
            lower: percentile(&values, alpha / 2.0),
            upper: percentile(&values, 1.0 - alpha / 2.0),
            excluded_replicates: excluded,
        }
    };

    Ok(MetricIntervals {
        auc: interval(|m| m.auc, points.auc),
        sensitivity: interval(|m| m.sensitivity, points.sensitivity),
        specificity: interval(|m| m.specificity, points.specificity),
        accuracy: interval(|m| m.accuracy, points.accuracy),
        f1: interval(|m| m.f1, points.f1),
    })
}

/// Linear interpolation between order statistics of a sorted sample.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
    }
}

#[derive(Debug, Clone, Copy)]
struct RepMetrics {
    auc: f64,
    sensitivity: f64,
    specificity: f64,
    accuracy: f64,
    f1: f64,
}

/// Full-sample point estimates via the direct metrics-module path, so report
/// rows agree with `metrics::*` bit-for-bit.
fn point_estimates(input: &EvalInput<'_>) -> Result<RepMetrics> {
    let scored: Vec<(f64, Label)> = match input.level {
        Level::Image => input
            .groups
            .iter()
            .flat_map(|g| g.scores.iter().map(|(_, s)| (*s, g.label)))
            .collect(),
        Level::Subject => aggregate_dataset(input.groups, input.strategy.expect("checked"))?
            .into_iter()
            .map(|s| (s.score, s.label))
            .collect(),
    };
    let auc = auc(&scored)?;
    let counts = confusion_at(&scored, input.threshold, input.mode)?;
    let m = metrics_from_confusion(&counts)?;
    Ok(RepMetrics {
        auc,
        sensitivity: m.sensitivity,
        specificity: m.specificity,
        accuracy: m.accuracy,
        f1: m.f1,
    })
}

/// Flattened, pre-sorted view of the evaluation slice so each replicate is
/// evaluated in O(n) without re-sorting (except subject votes recomputed
/// under photo-level resampling, which change per replicate).
struct FlatView {
    photo_scores: Vec<f64>,
    photo_pos: Vec<bool>,
    photo_subject: Vec<u32>,
    subject_pos: Vec<bool>,
    subject_spans: Vec<(u32, u32)>,
    /// Photo indices in ascending score order.
    photos_by_score: Vec<u32>,
    /// Per-subject vote scores under the input strategy (subject level only).
    subject_votes: Vec<f64>,
    /// Subject indices in ascending vote order (subject level only).
    subjects_by_vote: Vec<u32>,
}

impl FlatView {
    fn build(input: &EvalInput<'_>) -> Result<FlatView> {
        let n_photos: usize = input.groups.iter().map(|g| g.scores.len()).sum();
        let mut photo_scores = Vec::with_capacity(n_photos);
        let mut photo_pos = Vec::with_capacity(n_photos);
        let mut photo_subject = Vec::with_capacity(n_photos);
        let mut subject_pos = Vec::with_capacity(input.groups.len());
        let mut subject_spans = Vec::with_capacity(input.groups.len());

        for (s, group) in input.groups.iter().enumerate() {
            let start = photo_scores.len() as u32;
            for (_, score) in &group.scores {
                photo_scores.push(*score);
                photo_pos.push(group.label.is_positive());
                photo_subject.push(s as u32);
            }
            subject_pos.push(group.label.is_positive());
            subject_spans.push((start, photo_scores.len() as u32));
        }

        let mut photos_by_score: Vec<u32> = (0..photo_scores.len() as u32).collect();
        photos_by_score
            .sort_by(|&a, &b| photo_scores[a as usize].total_cmp(&photo_scores[b as usize]));

        let (subject_votes, subjects_by_vote) = if input.level == Level::Subject {
            let strategy = input.strategy.expect("checked");
            let votes: Vec<f64> = input
                .groups
                .iter()
                .map(|g| crate::voting::vote(&g.score_values(), strategy))
                .collect::<Result<_>>()?;
            let mut order: Vec<u32> = (0..votes.len() as u32).collect();
            order.sort_by(|&a, &b| votes[a as usize].total_cmp(&votes[b as usize]));
            (votes, order)
        } else {
            (Vec::new(), Vec::new())
        };

        Ok(FlatView {
            photo_scores,
            photo_pos,
            photo_subject,
            subject_pos,
            subject_spans,
            photos_by_score,
            subject_votes,
            subjects_by_vote,
        })
    }

    fn evaluate_replicate(
        &self,
        rng: &mut ChaCha8Rng,
        input: &EvalInput<'_>,
        unit: ResampleUnit,
    ) -> Option<RepMetrics> {
        match (unit, input.level) {
            (ResampleUnit::Photo, Level::Image) => {
                let counts = draw_counts(rng, self.photo_scores.len());
                self.weighted_metrics_photos(|p| counts[p], input)
            }
            (ResampleUnit::Subject, Level::Image) => {
                let counts = draw_counts(rng, self.subject_spans.len());
                self.weighted_metrics_photos(|p| counts[self.photo_subject[p] as usize], input)
            }
            (ResampleUnit::Subject, Level::Subject) => {
                let counts = draw_counts(rng, self.subject_spans.len());
                self.weighted_metrics_subjects(&counts, input)
            }
            (ResampleUnit::Photo, Level::Subject) => {
                let counts = draw_counts(rng, self.photo_scores.len());
                self.reaggregated_metrics(&counts, input)
            }
        }
    }

    /// Metrics over photos weighted by a per-photo multiplicity.
    fn weighted_metrics_photos<F>(&self, weight_of: F, input: &EvalInput<'_>) -> Option<RepMetrics>
    where
        F: Fn(usize) -> u32,
    {
        let decide = |score: f64| input.mode.is_positive(score, input.threshold);
        let (mut tp, mut fn_, mut fp, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for p in 0..self.photo_scores.len() {
            let w = weight_of(p) as u64;
            if w == 0 {
                continue;
            }
            match (decide(self.photo_scores[p]), self.photo_pos[p]) {
                (true, true) => tp += w,
                (false, true) => fn_ += w,
                (true, false) => fp += w,
                (false, false) => tn += w,
            }
        }
        let auc = weighted_auc(
            self.photos_by_score
                .iter()
                .map(|&p| (self.photo_scores[p as usize], self.photo_pos[p as usize], weight_of(p as usize) as u64)),
        )?;
        rep_metrics(auc, tp, fn_, fp, tn)
    }

    /// Metrics over subject vote scores weighted by per-subject multiplicity.
    fn weighted_metrics_subjects(&self, counts: &[u32], input: &EvalInput<'_>) -> Option<RepMetrics> {
        let decide = |score: f64| input.mode.is_positive(score, input.threshold);
        let (mut tp, mut fn_, mut fp, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for ((&vote, &pos), &count) in
            self.subject_votes.iter().zip(&self.subject_pos).zip(counts)
        {
            let w = count as u64;
            if w == 0 {
                continue;
            }
            match (decide(vote), pos) {
                (true, true) => tp += w,
                (false, true) => fn_ += w,
                (true, false) => fp += w,
                (false, false) => tn += w,
            }
        }
        let auc = weighted_auc(
            self.subjects_by_vote
                .iter()
                .map(|&s| (self.subject_votes[s as usize], self.subject_pos[s as usize], counts[s as usize] as u64)),
        )?;
        rep_metrics(auc, tp, fn_, fp, tn)
    }

    /// Photo-level resampling under subject aggregation: the drawn photo
    /// multiset is regrouped by subject (multiplicities change each
    /// subject's image count; undrawn subjects drop out) and votes are
    /// recomputed before scoring.
    fn reaggregated_metrics(&self, counts: &[u32], input: &EvalInput<'_>) -> Option<RepMetrics> {
        let strategy = input.strategy.expect("checked");
        let mut scored: Vec<(f64, bool)> = Vec::with_capacity(self.subject_spans.len());
        for (s, &(start, end)) in self.subject_spans.iter().enumerate() {
            let span = start as usize..end as usize;
            let mut total = 0u64;
            let mut weighted_sum = 0.0f64;
            let mut max = f64::NEG_INFINITY;
            let mut min = f64::INFINITY;
            for (&score, &count) in self.photo_scores[span.clone()].iter().zip(&counts[span]) {
                let w = count as u64;
                if w == 0 {
                    continue;
                }
                total += w;
                weighted_sum += w as f64 * score;
                max = max.max(score);
                min = min.min(score);
            }
            if total == 0 {
                continue;
            }
            let vote = match strategy {
                VoteStrategy::Max => max,
                VoteStrategy::Mean => (weighted_sum / total as f64).clamp(min, max),
            };
            scored.push((vote, self.subject_pos[s]));
        }

        let decide = |score: f64| input.mode.is_positive(score, input.threshold);
        let (mut tp, mut fn_, mut fp, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for &(score, pos) in &scored {
            match (decide(score), pos) {
                (true, true) => tp += 1,
                (false, true) => fn_ += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let auc = weighted_auc(scored.iter().map(|&(score, pos)| (score, pos, 1u64)))?;
        rep_metrics(auc, tp, fn_, fp, tn)
    }
}

fn draw_counts(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

/// Rank-based AUC over items in ascending score order with multiplicities.
/// Returns `None` when a class is absent from the resample.
fn weighted_auc(sorted: impl Iterator<Item = (f64, bool, u64)>) -> Option<f64> {
    let mut pos_rank_sum = 0.0f64;
    let mut cum = 0u64;
    let mut pos_total = 0u64;

    let mut iter = sorted.filter(|&(_, _, w)| w > 0).peekable();
    while let Some((score, _, _)) = iter.peek().copied() {
        let mut group_total = 0u64;
        let mut group_pos = 0u64;
        while let Some(&(s, pos, w)) = iter.peek() {
            if s != score {
                break;
            }
            group_total += w;
            if pos {
                group_pos += w;
            }
            iter.next();
        }
        let avg_rank = cum as f64 + (group_total as f64 + 1.0) / 2.0;
        pos_rank_sum += avg_rank * group_pos as f64;
        cum += group_total;
        pos_total += group_pos;
    }

    let neg_total = cum - pos_total;
    if pos_total == 0 || neg_total == 0 {
        return None;
    }
    let p = pos_total as f64;
    let n = neg_total as f64;
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn rep_metrics(auc: f64, tp: u64, fn_: u64, fp: u64, tn: u64) -> Option<RepMetrics> {
    let positives = tp + fn_;
    let negatives = fp + tn;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let (tp, fn_, fp, tn) = (tp as f64, fn_ as f64, fp as f64, tn as f64);
    let f1_denom = 2.0 * tp + fp + fn_;
    Some(RepMetrics {
        auc,
        sensitivity: tp / (tp + fn_),
        specificity: tn / (tn + fp),
        accuracy: (tp + tn) / (tp + fn_ + fp + tn),
        f1: if f1_denom == 0.0 { 0.0 } else { 2.0 * tp / f1_denom },
    })
}
