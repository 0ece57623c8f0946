//! Synthetic multi-center, multi-image-per-subject score datasets with known
//! ground-truth separability.
//!
//! The score model is a latent Gaussian per class, clamped to [0,1]: each
//! subject draws a latent from its class model and each image mixes the
//! subject latent with a fresh class draw. Because the mixture of two
//! independent Gaussians is Gaussian, the unclamped image-level AUC has the
//! closed form implemented by [`theoretical_auc`], which is what makes these
//! datasets usable as oracles for the metric and bootstrap tests.
//!
//! Generation is a pure function of the config: subject `i` draws from
//! ChaCha8 stream `i` of the seed, so subjects can be generated in any order
//! (or concurrently) with identical output.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as GaussianCdf};

use crate::dataset::{Dataset, Label, PredictionRecord, Split};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;

/// Latent Gaussian score model for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub mean: f64,
    pub spread: f64,
}

/// Positive/negative subject counts for one cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortCounts {
    pub positive: u32,
    pub negative: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Cohort name -> subject counts per class.
    pub subjects_per_cohort: BTreeMap<String, CohortCounts>,
    /// Images per subject drawn uniformly from `[lo, hi]`.
    pub images_per_subject: (u32, u32),
    pub positive_model: ClassModel,
    pub negative_model: ClassModel,
    /// Mixing weight in [0,1] between the per-subject latent and per-image
    /// noise: 0 = images independent, 1 = all images share the latent.
    pub subject_effect: f64,
    pub split_fractions: SplitFractions,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            subjects_per_cohort: BTreeMap::new(),
            images_per_subject: (3, 5),
            positive_model: ClassModel { mean: 0.7, spread: 0.2 },
            negative_model: ClassModel { mean: 0.3, spread: 0.2 },
            subject_effect: 0.5,
            split_fractions: SplitFractions { train: 0.6, validation: 0.2, test: 0.2 },
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn total_subjects(&self) -> u64 {
        self.subjects_per_cohort
            .values()
            .map(|c| c.positive as u64 + c.negative as u64)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.images_per_subject;
        if lo < 1 {
            return Err(Error::InvalidConfig("images_per_subject lower bound must be >= 1".into()));
        }
        if lo > hi {
            return Err(Error::InvalidConfig(format!(
                "images_per_subject range [{lo}, {hi}] is inverted"
            )));
        }
        for model in [&self.positive_model, &self.negative_model] {
            if !model.mean.is_finite() || !model.spread.is_finite() || model.spread < 0.0 {
                return Err(Error::InvalidConfig("class model mean/spread must be finite, spread >= 0".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.subject_effect) {
            return Err(Error::InvalidConfig("subject_effect must be in [0,1]".into()));
        }
        let f = &self.split_fractions;
        if f.train < 0.0 || f.validation < 0.0 || f.test < 0.0 {
            return Err(Error::InvalidConfig("split fractions must be non-negative".into()));
        }
        if (f.train + f.validation + f.test - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("split fractions must sum to 1".into()));
        }
        if self.total_subjects() == 0 {
            return Err(Error::InvalidConfig("zero total subjects".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<SimConfig> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Splits `n` subjects into train/validation/test by largest-remainder
/// apportionment, so the quotas are exact whenever the fractions allow it.
fn apportion(n: u32, f: &SplitFractions) -> [u32; 3] {
    let quotas = [n as f64 * f.train, n as f64 * f.validation, n as f64 * f.test];
    let mut counts = quotas.map(|q| q.floor() as u32);
    let mut remainder = n - counts.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in &order {
        if remainder == 0 {
            break;
        }
        counts[i] += 1;
        remainder -= 1;
    }
    counts
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Generates a dataset deterministically from `cfg`.
///
/// Splits are assigned subject-wise: each (cohort, class) block is
/// apportioned by the fractions and the assignment order shuffled with a
/// block-derived stream, so same-config runs are byte-identical.
pub fn simulate_cohort(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (lo, hi) = cfg.images_per_subject;
    let mut records = Vec::new();
    let mut subject_index: u64 = 0;
    let mut block_index: u64 = 0;

    for (cohort, counts) in &cfg.subjects_per_cohort {
        for (label, count) in [(Label::Positive, counts.positive), (Label::Negative, counts.negative)] {
            let [n_train, n_val, n_test] = apportion(count, &cfg.split_fractions);
            let mut splits = Vec::with_capacity(count as usize);
            splits.extend(std::iter::repeat_n(Split::Train, n_train as usize));
            splits.extend(std::iter::repeat_n(Split::Validation, n_val as usize));
            splits.extend(std::iter::repeat_n(Split::Test, n_test as usize));
            let mut block_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            block_rng.set_stream((1 << 32) + block_index);
            splits.shuffle(&mut block_rng);
            block_index += 1;

            let model = match label {
                Label::Positive => cfg.positive_model,
                Label::Negative => cfg.negative_model,
            };
            let gaussian = Normal::new(model.mean, model.spread)
                .map_err(|e| Error::InvalidConfig(format!("class model: {e}")))?;
            let class_tag = if label.is_positive() { 'p' } else { 'n' };

            for (i, split) in splits.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(subject_index);
                subject_index += 1;

                let subject_id = format!("{cohort}-{class_tag}{i:05}");
                let image_count = rng.random_range(lo..=hi);
                let latent: f64 = gaussian.sample(&mut rng);
                for j in 0..image_count {
                    let fresh: f64 = gaussian.sample(&mut rng);
                    let score = clamp01(
                        cfg.subject_effect * latent + (1.0 - cfg.subject_effect) * fresh,
                    );
                    records.push(PredictionRecord {
                        image_id: format!("{subject_id}-{j:02}"),
                        subject_id: subject_id.clone(),
                        cohort: cohort.clone(),
                        split: *split,
                        label,
                        score,
                    });
                }
            }
        }
    }
    Ok(Dataset::new(records, format!("simulate(seed={})", cfg.seed)))
}

/// Largest AUC perturbation from clamp-point ties the oracle tolerates.
const CLAMP_TIE_TOLERANCE: f64 = 1e-4;

/// Closed-form image-level AUC of the Gaussian score model.
///
/// The per-image marginal is Gaussian with variance scaled by
/// `k = e^2 + (1-e)^2` for subject effect `e`, so the unclamped value is
/// `Phi(dmu / sqrt(k * (s0^2 + s1^2)))`; at `e = 0` this reduces to
/// `Phi(dmu / sqrt(s0^2 + s1^2))`.
///
/// Clamping to [0,1] is weakly increasing, so it changes the AUC only
/// through the ties it creates where *both* classes pile up on the same
/// endpoint; that perturbation is bounded by
/// `0.5 * (P(s1>=1)P(s0>=1) + P(s1<=0)P(s0<=0))`. The oracle declares
/// itself inapplicable when the bound exceeds 1e-4.
pub fn theoretical_auc(cfg: &SimConfig) -> Result<f64> {
    let e = cfg.subject_effect;
    let k = e * e + (1.0 - e) * (1.0 - e);
    let s0 = cfg.negative_model.spread * k.sqrt();
    let s1 = cfg.positive_model.spread * k.sqrt();
    let (m0, m1) = (cfg.negative_model.mean, cfg.positive_model.mean);

    let standard = GaussianCdf::new(0.0, 1.0).expect("standard normal");
    let tail_above = |mean: f64, spread: f64| {
        if spread == 0.0 {
            f64::from(u8::from(mean >= 1.0))
        } else {
            1.0 - standard.cdf((1.0 - mean) / spread)
        }
    };
    let tail_below = |mean: f64, spread: f64| {
        if spread == 0.0 {
            f64::from(u8::from(mean <= 0.0))
        } else {
            standard.cdf((0.0 - mean) / spread)
        }
    };
    let tie_bound = 0.5
        * (tail_above(m1, s1) * tail_above(m0, s0) + tail_below(m1, s1) * tail_below(m0, s0));
    if tie_bound > CLAMP_TIE_TOLERANCE {
        return Err(Error::OracleInapplicable(format!(
            "both classes have mass at a clamp endpoint (AUC perturbation bound {tie_bound:.2e} > {CLAMP_TIE_TOLERANCE:.0e})"
        )));
    }

    let delta = m1 - m0;
    let denom = (s0 * s0 + s1 * s1).sqrt();
    if denom == 0.0 {
        return Ok(if delta > 0.0 {
            1.0
        } else if delta < 0.0 {
            0.0
        } else {
            0.5
        });
    }
    Ok(standard.cdf(delta / denom))
}

/// One (cohort, split, class) block of an exactly-shaped fixture dataset.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub cohort: String,
    pub split: Split,
    pub label: Label,
    pub subjects: u32,
    pub images: u32,
}

impl BlockSpec {
    pub fn new(cohort: &str, split: Split, label: Label, subjects: u32, images: u32) -> BlockSpec {
        BlockSpec { cohort: cohort.to_string(), split, label, subjects, images }
    }
}

/// Builds a dataset with exact per-block subject and image counts.
///
/// Images are spread as evenly as possible over the block's subjects (every
/// subject gets at least one). Scores are seeded uniforms with a mild class
/// shift; use this when the *structure* matters and the scores only need to
/// be valid.
pub fn exact_dataset(blocks: &[BlockSpec], seed: u64) -> Result<Dataset> {
    let mut records = Vec::new();
    for (block_index, block) in blocks.iter().enumerate() {
        if block.subjects == 0 {
            if block.images != 0 {
                return Err(Error::InvalidConfig(format!(
                    "block {block_index}: {} images but no subjects",
                    block.images
                )));
            }
            continue;
        }
        if block.images < block.subjects {
            return Err(Error::InvalidConfig(format!(
                "block {block_index}: fewer images ({}) than subjects ({})",
                block.images, block.subjects
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(block_index as u64);
        let base = block.images / block.subjects;
        let extra = block.images % block.subjects;
        let class_tag = if block.label.is_positive() { 'p' } else { 'n' };
        for i in 0..block.subjects {
            // Block index in the id keeps subjects distinct even when two
            // blocks share the same (cohort, split, label) triple.
            let subject_id = format!(
                "{}-{}-b{block_index:02}{class_tag}{i:05}",
                block.cohort,
                block.split.as_str()
            );
            let image_count = base + u32::from(i < extra);
            for j in 0..image_count {
                let u: f64 = rng.random();
                let score = match block.label {
                    Label::Positive => 0.25 + 0.75 * u,
                    Label::Negative => 0.75 * u,
                };
                records.push(PredictionRecord {
                    image_id: format!("{subject_id}-{j:02}"),
                    subject_id: subject_id.clone(),
                    cohort: block.cohort.clone(),
                    split: block.split,
                    label: block.label,
                    score,
                });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidConfig("zero total subjects".into()));
    }
    Ok(Dataset::new(records, format!("fixture(seed={seed})")))
}

/// Reconstructs a score multiset realizing `counts` at `threshold` under the
/// `>=` decision rule: predicted positives score halfway between the
/// threshold and 1, predicted negatives halfway between 0 and the threshold.
pub fn scored_from_counts(counts: &ConfusionMatrix, threshold: f64) -> Result<Vec<(f64, Label)>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold must be in (0,1] to realize both decisions, got {threshold}"
        )));
    }
    let hi = (threshold + 1.0) / 2.0;
    let lo = threshold / 2.0;
    let mut scored = Vec::with_capacity(counts.total() as usize);
    scored.extend(std::iter::repeat_n((hi, Label::Positive), counts.tp as usize));
    scored.extend(std::iter::repeat_n((lo, Label::Positive), counts.fn_ as usize));
    scored.extend(std::iter::repeat_n((hi, Label::Negative), counts.fp as usize));
    scored.extend(std::iter::repeat_n((lo, Label::Negative), counts.tn as usize));
    Ok(scored)
}

/// Like [`scored_from_counts`] but wraps each score in a one-image subject
/// record, so the counts are realized at both image and subject level.
pub fn records_from_counts(
    cohort: &str,
    split: Split,
    counts: &ConfusionMatrix,
    threshold: f64,
) -> Result<Vec<PredictionRecord>> {
    let scored = scored_from_counts(counts, threshold)?;
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (score, label))| {
            let subject_id = format!("{cohort}-{}-c{i:05}", split.as_str());
            PredictionRecord {
                image_id: format!("{subject_id}-00"),
                subject_id,
                cohort: cohort.to_string(),
                split,
                label,
                score,
            }
        })
        .collect())
}
