//! Evaluation, calibration and decision engine for multi-image-per-subject
//! binary screening classifiers.
//!
//! The classifier itself is abstracted as an upstream score source: the unit
//! of interchange is a [`dataset::PredictionRecord`] (one image's score plus
//! identity, label, cohort and split metadata). On top of that this crate
//! provides:
//!
//! - [`dataset`]: parsing (CSV/JSON), validation and subject grouping.
//! - [`voting`]: max/mean aggregation of image scores into subject scores.
//! - [`metrics`]: confusion matrices, sensitivity/specificity/accuracy/F1,
//!   ROC curves and rank-based AUC.
//! - [`calibration`]: best-F1 threshold selection on the validation split,
//!   frozen into portable artifacts.
//! - [`bootstrap`]: seeded percentile-bootstrap confidence intervals.
//! - [`simulate`]: synthetic cohorts with a closed-form AUC oracle.
//! - [`report`]: cohort-stratified performance/confusion reports and ROC
//!   exports.

pub mod bootstrap;
pub mod calibration;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod report;
pub mod simulate;
pub mod voting;

pub use bootstrap::{BootstrapConfig, IntervalEstimate, MetricName, ResampleUnit};
pub use calibration::{CalibrationArtifact, Level};
pub use dataset::{Dataset, Format, Label, PredictionRecord, Split, SubjectGroup};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, MetricSet, RocCurve, ThresholdMode};
pub use voting::{SubjectScore, VoteStrategy};
