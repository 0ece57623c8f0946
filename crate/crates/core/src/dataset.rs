//! Prediction-record data model: parsing, validation and subject grouping.
//!
//! The atomic unit of every computation in this crate is one
//! [`PredictionRecord`]: a classifier score for a single image together with
//! its identity, label, cohort and split metadata. A [`Dataset`] is an
//! ordered collection of records; [`Dataset::partition_and_group`] turns it
//! into per-subject [`SubjectGroup`]s for vote aggregation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which partition of the study a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

/// Binary class label. Serialized as `1` (positive) / `0` (control).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive)
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, String> {
        match value {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(value: Label) -> u8 {
        value.as_u8()
    }
}

/// One image's classifier score plus identity/label/cohort/split metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub subject_id: String,
    pub cohort: String,
    pub split: Split,
    pub label: Label,
    pub score: f64,
}

/// All records of one subject, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectGroup {
    pub subject_id: String,
    pub label: Label,
    pub cohort: String,
    pub split: Split,
    /// `(image_id, score)` pairs, length >= 1, preserving input order.
    pub scores: Vec<(String, f64)>,
}

impl SubjectGroup {
    pub fn score_values(&self) -> Vec<f64> {
        self.scores.iter().map(|(_, s)| *s).collect()
    }
}

/// Input/output encoding for record collections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Pick a format from a file extension; anything that is not `.json`
    /// is treated as CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

pub const CSV_HEADER: [&str; 6] = ["image_id", "subject_id", "cohort", "split", "label", "score"];

/// An ordered, immutable collection of prediction records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<PredictionRecord>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(records: Vec<PredictionRecord>, provenance: impl Into<String>) -> Dataset {
        Dataset { records, provenance: provenance.into() }
    }

    /// Checks every dataset invariant and reports all violations found.
    ///
    /// Violations are data, not failures: the caller decides whether to
    /// reject. A dataset is accepted iff the report is clean.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut seen_images: HashSet<&str> = HashSet::with_capacity(self.records.len());
        let mut first_of_subject: HashMap<&str, &PredictionRecord> = HashMap::new();

        for rec in &self.records {
            if !(rec.score.is_finite() && (0.0..=1.0).contains(&rec.score)) {
                violations.push(Violation {
                    kind: ViolationKind::ScoreOutOfRange,
                    id: rec.image_id.clone(),
                    message: format!("image `{}`: score out of [0,1]: {}", rec.image_id, rec.score),
                });
            }
            if !seen_images.insert(&rec.image_id) {
                violations.push(Violation {
                    kind: ViolationKind::DuplicateImageId,
                    id: rec.image_id.clone(),
                    message: format!("duplicate image_id `{}`", rec.image_id),
                });
            }
            match first_of_subject.get(rec.subject_id.as_str()) {
                None => {
                    first_of_subject.insert(&rec.subject_id, rec);
                }
                Some(first) => {
                    if first.label != rec.label {
                        violations.push(Violation {
                            kind: ViolationKind::InconsistentLabel,
                            id: rec.subject_id.clone(),
                            message: format!(
                                "subject `{}`: inconsistent label ({} vs {})",
                                rec.subject_id,
                                first.label.as_u8(),
                                rec.label.as_u8()
                            ),
                        });
                    }
                    if first.cohort != rec.cohort {
                        violations.push(Violation {
                            kind: ViolationKind::InconsistentCohort,
                            id: rec.subject_id.clone(),
                            message: format!(
                                "subject `{}`: inconsistent cohort (`{}` vs `{}`)",
                                rec.subject_id, first.cohort, rec.cohort
                            ),
                        });
                    }
                    if first.split != rec.split {
                        violations.push(Violation {
                            kind: ViolationKind::InconsistentSplit,
                            id: rec.subject_id.clone(),
                            message: format!(
                                "subject `{}`: inconsistent split (`{}` vs `{}`)",
                                rec.subject_id, first.split, rec.split
                            ),
                        });
                    }
                }
            }
        }
        ValidationReport { violations }
    }

    /// Filters by split and/or cohort (absent filter = no constraint) and
    /// groups the surviving records by subject.
    ///
    /// Group order is deterministic (sorted by `subject_id`); within-group
    /// score order preserves input order. An empty result is an empty list,
    /// not an error.
    pub fn partition_and_group(&self, split: Option<Split>, cohort: Option<&str>) -> Vec<SubjectGroup> {
        let mut groups: BTreeMap<&str, SubjectGroup> = BTreeMap::new();
        for rec in &self.records {
            if split.is_some_and(|s| s != rec.split) {
                continue;
            }
            if cohort.is_some_and(|c| c != rec.cohort) {
                continue;
            }
            groups
                .entry(&rec.subject_id)
                .or_insert_with(|| SubjectGroup {
                    subject_id: rec.subject_id.clone(),
                    label: rec.label,
                    cohort: rec.cohort.clone(),
                    split: rec.split,
                    scores: Vec::new(),
                })
                .scores
                .push((rec.image_id.clone(), rec.score));
        }
        groups.into_values().collect()
    }

    /// A copy restricted to the records matching the given filters.
    pub fn filtered(&self, split: Option<Split>, cohort: Option<&str>) -> Dataset {
        let records = self
            .records
            .iter()
            .filter(|r| !split.is_some_and(|s| s != r.split))
            .filter(|r| !cohort.is_some_and(|c| c != r.cohort))
            .cloned()
            .collect();
        Dataset { records, provenance: self.provenance.clone() }
    }

    /// Distinct cohort names, sorted.
    pub fn cohorts(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> =
            self.records.iter().map(|r| r.cohort.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for rec in &self.records {
            w.write_record([
                rec.image_id.as_str(),
                rec.subject_id.as_str(),
                rec.cohort.as_str(),
                rec.split.as_str(),
                &rec.label.as_u8().to_string(),
                &rec.score.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.records)?;
        s.push('\n');
        Ok(s)
    }
}

/// Parses a record stream in the declared format.
///
/// CSV input must carry the exact header
/// `image_id,subject_id,cohort,split,label,score`; JSON input is an array of
/// objects with the same six keys. Records are returned in input order.
pub fn parse_records<R: Read>(input: R, format: Format) -> Result<Dataset> {
    let records = match format {
        Format::Csv => parse_csv(input)?,
        Format::Json => {
            let records: Vec<PredictionRecord> = serde_json::from_reader(input)?;
            records
        }
    };
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(Dataset { records, provenance: format!("{format} input") })
}

/// Parses the file at `path`, picking the format from its extension, and
/// stamps the dataset provenance with the path.
pub fn parse_path(path: &Path, format: Option<Format>) -> Result<Dataset> {
    let format = format.unwrap_or_else(|| Format::from_path(path));
    let file = std::fs::File::open(path)?;
    let mut dataset = parse_records(std::io::BufReader::new(file), format)?;
    dataset.provenance = path.display().to_string();
    Ok(dataset)
}

fn parse_csv<R: Read>(input: R) -> Result<Vec<PredictionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::MalformedRow {
            line: 1,
            field: "header",
            message: format!(
                "expected header `{}`, got `{}`",
                CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != CSV_HEADER.len() {
            return Err(Error::MalformedRow {
                line,
                field: "row",
                message: format!("expected {} fields, got {}", CSV_HEADER.len(), row.len()),
            });
        }
        let field = |i: usize| row.get(i).unwrap_or_default();
        let split: Split = field(3).parse().map_err(|_| Error::MalformedRow {
            line,
            field: "split",
            message: format!("unknown split `{}`", field(3)),
        })?;
        let label = match field(4) {
            "0" => Label::Negative,
            "1" => Label::Positive,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    field: "label",
                    message: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        let score: f64 = field(5).parse().map_err(|_| Error::MalformedRow {
            line,
            field: "score",
            message: format!("score not parseable as real: `{}`", field(5)),
        })?;
        records.push(PredictionRecord {
            image_id: field(0).to_string(),
            subject_id: field(1).to_string(),
            cohort: field(2).to_string(),
            split,
            label,
            score,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    ScoreOutOfRange,
    DuplicateImageId,
    InconsistentLabel,
    InconsistentCohort,
    InconsistentSplit,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// The offending image_id or subject_id.
    pub id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Outcome of [`Dataset::validate`]: every violation found, in input order.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "0 violations");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(image: &str, subject: &str, score: f64) -> PredictionRecord {
        PredictionRecord {
            image_id: image.to_string(),
            subject_id: subject.to_string(),
            cohort: "Shanghai".to_string(),
            split: Split::Test,
            label: Label::Positive,
            score,
        }
    }

    #[test]
    fn parses_single_csv_record() {
        let csv = "image_id,subject_id,cohort,split,label,score\ni1,s1,Shanghai,test,1,0.9";
        let d = parse_records(csv.as_bytes(), Format::Csv).unwrap();
        assert_eq!(d.records.len(), 1);
        let r = &d.records[0];
        assert_eq!(r.image_id, "i1");
        assert_eq!(r.subject_id, "s1");
        assert_eq!(r.cohort, "Shanghai");
        assert_eq!(r.split, Split::Test);
        assert_eq!(r.label, Label::Positive);
        assert_eq!(r.score, 0.9);
    }

    #[test]
    fn empty_body_is_no_records() {
        let csv = "image_id,subject_id,cohort,split,label,score\n";
        let err = parse_records(csv.as_bytes(), Format::Csv).unwrap_err();
        assert!(matches!(err, Error::NoRecords));
        assert_eq!(err.to_string(), "no records");
    }

    #[test]
    fn malformed_score_names_line_and_field() {
        let csv = "image_id,subject_id,cohort,split,label,score\ni1,s1,Shanghai,test,1,0.9\ni2,s1,Shanghai,test,1,abc";
        let err = parse_records(csv.as_bytes(), Format::Csv).unwrap_err();
        match err {
            Error::MalformedRow { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "score");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn unknown_split_rejected() {
        let csv = "image_id,subject_id,cohort,split,label,score\ni1,s1,Shanghai,holdout,1,0.9";
        let err = parse_records(csv.as_bytes(), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("unknown split"));
    }

    #[test]
    fn bad_label_rejected() {
        let csv = "image_id,subject_id,cohort,split,label,score\ni1,s1,Shanghai,test,2,0.9";
        let err = parse_records(csv.as_bytes(), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("label"));
    }

    #[test]
    fn wrong_header_rejected() {
        let csv = "id,subject,cohort,split,label,score\ni1,s1,Shanghai,test,1,0.9";
        let err = parse_records(csv.as_bytes(), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("header"));
    }

    #[test]
    fn parses_json_array() {
        let json = r#"[{"image_id":"i1","subject_id":"s1","cohort":"Spain","split":"validation","label":0,"score":0.25}]"#;
        let d = parse_records(json.as_bytes(), Format::Json).unwrap();
        assert_eq!(d.records.len(), 1);
        assert_eq!(d.records[0].split, Split::Validation);
        assert_eq!(d.records[0].label, Label::Negative);
    }

    #[test]
    fn json_label_out_of_range_rejected() {
        let json = r#"[{"image_id":"i1","subject_id":"s1","cohort":"Spain","split":"test","label":3,"score":0.25}]"#;
        assert!(parse_records(json.as_bytes(), Format::Json).is_err());
    }

    #[test]
    fn validate_flags_score_out_of_range() {
        let d = Dataset::new(vec![record("i1", "s1", 1.2)], "test");
        let report = d.validate();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::ScoreOutOfRange);
        assert!(report.violations[0].message.contains("score out of [0,1]"));
    }

    #[test]
    fn validate_flags_inconsistent_label() {
        let mut a = record("i1", "s1", 0.5);
        a.label = Label::Negative;
        let b = record("i2", "s1", 0.6);
        let d = Dataset::new(vec![a, b], "test");
        let report = d.validate();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::InconsistentLabel);
        assert!(report.violations[0].message.contains("inconsistent label"));
    }

    #[test]
    fn validate_flags_duplicate_image_id() {
        let d = Dataset::new(vec![record("i1", "s1", 0.5), record("i1", "s1", 0.6)], "test");
        let report = d.validate();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::DuplicateImageId);
    }

    #[test]
    fn validate_clean_fixture_is_empty() {
        let d = Dataset::new(vec![record("i1", "s1", 0.5), record("i2", "s2", 0.6)], "test");
        assert!(d.validate().is_clean());
        assert_eq!(d.validate().to_string(), "0 violations");
    }

    #[test]
    fn groups_sorted_by_subject_and_preserve_order() {
        let d = Dataset::new(
            vec![record("i1", "s2", 0.5), record("i2", "s1", 0.1), record("i3", "s2", 0.9)],
            "test",
        );
        let groups = d.partition_and_group(None, None);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].subject_id, "s1");
        assert_eq!(groups[1].subject_id, "s2");
        assert_eq!(groups[1].scores, vec![("i1".to_string(), 0.5), ("i3".to_string(), 0.9)]);
    }

    #[test]
    fn single_record_dataset_is_one_group_of_one() {
        let d = Dataset::new(vec![record("i1", "s1", 0.7)], "test");
        let groups = d.partition_and_group(None, None);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].scores.len(), 1);
    }

    #[test]
    fn filters_compose() {
        let mut records = vec![record("i1", "s1", 0.5), record("i2", "s2", 0.5)];
        records[1].cohort = "Hebei".to_string();
        records[1].split = Split::Train;
        let d = Dataset::new(records, "test");
        assert_eq!(d.partition_and_group(Some(Split::Test), None).len(), 1);
        assert_eq!(d.partition_and_group(None, Some("Hebei")).len(), 1);
        assert_eq!(d.partition_and_group(Some(Split::Test), Some("Hebei")).len(), 0);
        assert_eq!(d.cohorts(), vec!["Hebei".to_string(), "Shanghai".to_string()]);
    }

    #[test]
    fn csv_round_trip_preserves_groups() {
        let mut records = Vec::new();
        for i in 0..20 {
            let mut r = record(&format!("i{i}"), &format!("s{}", i % 7), 0.05 * i as f64);
            r.label = if i % 7 < 3 { Label::Positive } else { Label::Negative };
            // labels must agree within a subject
            records.push(r);
        }
        let d = Dataset::new(records, "test");
        let csv = d.to_csv_string().unwrap();
        let reparsed = parse_records(csv.as_bytes(), Format::Csv).unwrap();
        assert_eq!(d.partition_and_group(None, None), reparsed.partition_and_group(None, None));
        let json = d.to_json_string().unwrap();
        let reparsed = parse_records(json.as_bytes(), Format::Json).unwrap();
        assert_eq!(d.partition_and_group(None, None), reparsed.partition_and_group(None, None));
    }

    #[test]
    fn cohort_with_comma_survives_csv() {
        let mut r = record("i1", "s1", 0.5);
        r.cohort = "La Fe, Valencia".to_string();
        let d = Dataset::new(vec![r], "test");
        let csv = d.to_csv_string().unwrap();
        let reparsed = parse_records(csv.as_bytes(), Format::Csv).unwrap();
        assert_eq!(reparsed.records[0].cohort, "La Fe, Valencia");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        prop_compose! {
            fn arb_dataset()(
                rows in prop::collection::vec((0..40u32, 0..=100u32), 1..120)
            ) -> Dataset {
                let splits = [Split::Train, Split::Validation, Split::Test];
                let cohorts = ["Shanghai", "Hebei", "Spain"];
                // Metadata derived from the subject id keeps groups consistent.
                let records = rows
                    .iter()
                    .enumerate()
                    .map(|(i, &(subject, score))| PredictionRecord {
                        image_id: format!("i{i}"),
                        subject_id: format!("s{subject:02}"),
                        cohort: cohorts[subject as usize % 3].to_string(),
                        split: splits[(subject as usize / 3) % 3],
                        label: if subject % 2 == 0 { Label::Positive } else { Label::Negative },
                        score: score as f64 / 100.0,
                    })
                    .collect();
                Dataset::new(records, "prop")
            }
        }

        proptest! {
            #[test]
            fn group_sizes_sum_to_filtered_count(d in arb_dataset()) {
                let splits = [None, Some(Split::Train), Some(Split::Validation), Some(Split::Test)];
                let cohorts = [None, Some("Shanghai"), Some("Hebei"), Some("Spain")];
                for split in splits {
                    for cohort in cohorts {
                        let groups = d.partition_and_group(split, cohort);
                        let group_total: usize = groups.iter().map(|g| g.scores.len()).sum();
                        let filtered = d.filtered(split, cohort).records.len();
                        prop_assert_eq!(group_total, filtered);
                    }
                }
            }

            #[test]
            fn grouping_is_permutation_insensitive(d in arb_dataset(), seed in 0u64..1000) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut shuffled = d.clone();
                shuffled.records.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let a = d.partition_and_group(None, None);
                let b = shuffled.partition_and_group(None, None);
                let key = |groups: &[SubjectGroup]| {
                    groups
                        .iter()
                        .map(|g| {
                            let mut scores = g.score_values();
                            scores.sort_by(f64::total_cmp);
                            (g.subject_id.clone(), scores)
                        })
                        .collect::<Vec<_>>()
                };
                prop_assert_eq!(key(&a), key(&b));
            }

            #[test]
            fn round_trip_preserves_groups(d in arb_dataset()) {
                let csv = d.to_csv_string().unwrap();
                let back = parse_records(csv.as_bytes(), Format::Csv).unwrap();
                prop_assert_eq!(d.partition_and_group(None, None), back.partition_and_group(None, None));
                let json = d.to_json_string().unwrap();
                let back = parse_records(json.as_bytes(), Format::Json).unwrap();
                prop_assert_eq!(d.partition_and_group(None, None), back.partition_and_group(None, None));
            }
        }
    }
}
