//! Subject-level score aggregation.
//!
//! A subject with several images gets a single score via one of two vote
//! strategies: `max` takes the highest image-level score, `mean` the
//! unweighted arithmetic mean. Both keep scores in [0,1], so image-level and
//! subject-level decisions share the same threshold scale.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, SubjectGroup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteStrategy {
    Max,
    Mean,
}

impl VoteStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            VoteStrategy::Max => "max",
            VoteStrategy::Mean => "mean",
        }
    }
}

impl fmt::Display for VoteStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for VoteStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(VoteStrategy::Max),
            "mean" => Ok(VoteStrategy::Mean),
            other => Err(Error::UnknownStrategy(other.to_string())),
        }
    }
}

/// A subject's aggregated score under one strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectScore {
    pub subject_id: String,
    pub label: Label,
    pub cohort: String,
    pub strategy: VoteStrategy,
    pub score: f64,
}

/// Aggregates one subject's image scores into a single score.
///
/// The mean sums in sorted order, so the vote is bit-identical under any
/// permutation of the scores, and is clamped into the observed [min, max]
/// so summation rounding can never push it outside the range of its inputs.
pub fn vote(scores: &[f64], strategy: VoteStrategy) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::NoScores);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(match strategy {
        VoteStrategy::Max => max,
        VoteStrategy::Mean => {
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let mut sorted = scores.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mean = sorted.iter().sum::<f64>() / scores.len() as f64;
            mean.clamp(min, max)
        }
    })
}

/// One [`SubjectScore`] per group, preserving group order.
pub fn aggregate_dataset(groups: &[SubjectGroup], strategy: VoteStrategy) -> Result<Vec<SubjectScore>> {
    groups
        .iter()
        .map(|g| {
            let values = g.score_values();
            Ok(SubjectScore {
                subject_id: g.subject_id.clone(),
                label: g.label,
                cohort: g.cohort.clone(),
                strategy,
                score: vote(&values, strategy)?,
            })
        })
        .collect()
}
