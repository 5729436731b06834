//! Calibration records and per-exit confidence profiles.
//!
//! Records come as one CSV row per (sample, location). A location's
//! profile answers two questions for any threshold `t`: what fraction of
//! samples reach confidence `t` (pass rate), and how accurate those
//! samples are (conditional accuracy). Confidence equal to the threshold
//! passes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::decision::ThresholdConfig;

/// Location id reserved for the backbone's own classifier.
pub const FINAL_LOCATION: &str = "final";

const HEADER: [&str; 4] = ["sample_id", "location_id", "confidence", "correct"];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProfileError {
    #[error("calibration csv: {0}")]
    Csv(String),
    #[error("calibration csv header must be `sample_id,location_id,confidence,correct`")]
    Header,
    #[error("row {row}: malformed record ({reason})")]
    MalformedRow { row: u64, reason: String },
    #[error("row {row}: confidence {value} outside [0, 1]")]
    ConfidenceRange { row: u64, value: f64 },
    #[error("duplicate record for sample {sample_id} at {location:?}")]
    Duplicate { sample_id: u64, location: String },
    #[error("location {location:?} disagrees with {reference:?} on sample {sample_id}")]
    MismatchedSamples { location: String, reference: String, sample_id: u64 },
    #[error("no calibration records")]
    Empty,
    #[error("no records for location {0:?}")]
    MissingLocation(String),
    #[error("correction factor must lie in (0, 1], got {0}")]
    InvalidCorrection(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub sample_id: u64,
    pub location_id: String,
    pub confidence: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub confidence: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationSource {
    Validation,
    TrainingWithCorrection,
}

#[derive(Debug, Deserialize)]
struct Row {
    sample_id: u64,
    location_id: String,
    confidence: f64,
    correct: u8,
}

/// Joint records: every location holds one outcome per sample, aligned
/// with the shared ascending `sample_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    sample_ids: Vec<u64>,
    by_location: BTreeMap<String, Vec<Outcome>>,
}

impl RecordSet {
    pub fn from_records(records: Vec<CalibrationRecord>) -> Result<Self, ProfileError> {
        let mut grouped: BTreeMap<String, BTreeMap<u64, Outcome>> = BTreeMap::new();
        for (row, r) in records.into_iter().enumerate() {
            if !(0.0..=1.0).contains(&r.confidence) {
                return Err(ProfileError::ConfidenceRange { row: row as u64 + 1, value: r.confidence });
            }
            let outcome = Outcome { confidence: r.confidence, correct: r.correct };
            if grouped.entry(r.location_id.clone()).or_default().insert(r.sample_id, outcome).is_some() {
                return Err(ProfileError::Duplicate { sample_id: r.sample_id, location: r.location_id });
            }
        }
        let Some((reference, first)) = grouped.iter().next() else {
            return Err(ProfileError::Empty);
        };
        let sample_ids: Vec<u64> = first.keys().copied().collect();
        let reference_set: BTreeSet<u64> = sample_ids.iter().copied().collect();
        for (loc, samples) in &grouped {
            if let Some(&odd) = samples.keys().find(|s| !reference_set.contains(s)) {
                return Err(ProfileError::MismatchedSamples {
                    location: loc.clone(),
                    reference: reference.clone(),
                    sample_id: odd,
                });
            }
            if let Some(&missing) = sample_ids.iter().find(|s| !samples.contains_key(s)) {
                return Err(ProfileError::MismatchedSamples {
                    location: loc.clone(),
                    reference: reference.clone(),
                    sample_id: missing,
                });
            }
        }
        let by_location = grouped.into_iter().map(|(loc, s)| (loc, s.into_values().collect())).collect();
        Ok(RecordSet { sample_ids, by_location })
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn locations(&self) -> impl Iterator<Item = &str> {
        self.by_location.keys().map(String::as_str)
    }

    pub fn outcomes(&self, location: &str) -> Option<&[Outcome]> {
        self.by_location.get(location).map(Vec::as_slice)
    }

    pub fn profile(&self, location: &str, source: CalibrationSource) -> Result<ExitProfile, ProfileError> {
        let outcomes = self.outcomes(location).ok_or_else(|| ProfileError::MissingLocation(location.to_string()))?;
        profile_exit(location, outcomes, source)
    }

    /// One profile per location.
    pub fn profiles(&self, source: CalibrationSource) -> BTreeMap<String, ExitProfile> {
        self.by_location
            .iter()
            .map(|(loc, o)| (loc.clone(), profile_exit(loc, o, source).expect("non-empty")))
            .collect()
    }

    /// Rows ordered by sample id, then location id.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ProfileError> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| ProfileError::Csv(e.to_string());
        out.write_record(HEADER).map_err(csv_err)?;
        for (i, id) in self.sample_ids.iter().enumerate() {
            for (loc, outcomes) in &self.by_location {
                let o = outcomes[i];
                out.write_record([
                    id.to_string(),
                    loc.clone(),
                    o.confidence.to_string(),
                    u8::from(o.correct).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush().map_err(|e| ProfileError::Csv(e.to_string()))
    }
}

/// Parse calibration CSV and group it by location.
pub fn load_records<R: Read>(reader: R) -> Result<RecordSet, ProfileError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| ProfileError::Csv(e.to_string()))?;
    if headers.iter().ne(HEADER) {
        return Err(ProfileError::Header);
    }
    let mut records = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| ProfileError::MalformedRow { row: line, reason: e.to_string() })?;
        if !(0.0..=1.0).contains(&row.confidence) {
            return Err(ProfileError::ConfidenceRange { row: line, value: row.confidence });
        }
        let correct = match row.correct {
            0 => false,
            1 => true,
            other => {
                return Err(ProfileError::MalformedRow {
                    row: line,
                    reason: format!("correct must be 0 or 1, got {other}"),
                })
            }
        };
        records.push(CalibrationRecord {
            sample_id: row.sample_id,
            location_id: row.location_id,
            confidence: row.confidence,
            correct,
        });
    }
    RecordSet::from_records(records)
}

/// Empirical confidence profile of one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitProfile {
    location_id: String,
    source: CalibrationSource,
    /// Ascending.
    confidences: Vec<f64>,
    /// `correct_from[i]` = correct samples among `confidences[i..]`.
    correct_from: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub pass_rate: f64,
    pub conditional_accuracy: Option<f64>,
}

impl ExitProfile {
    pub fn location_id(&self) -> &str {
        &self.location_id
    }

    pub fn source(&self) -> CalibrationSource {
        self.source
    }

    pub fn n_samples(&self) -> usize {
        self.confidences.len()
    }

    fn first_passing(&self, t: f64) -> usize {
        self.confidences.partition_point(|&c| c < t)
    }

    pub fn pass_count(&self, t: f64) -> usize {
        self.n_samples() - self.first_passing(t)
    }

    /// Fraction of samples with confidence >= t.
    pub fn pass_rate(&self, t: f64) -> f64 {
        self.pass_count(t) as f64 / self.n_samples() as f64
    }

    /// Accuracy among samples with confidence >= t; `None` when none pass.
    pub fn conditional_accuracy(&self, t: f64) -> Option<f64> {
        let first = self.first_passing(t);
        let passing = self.n_samples() - first;
        (passing > 0).then(|| self.correct_from[first] as f64 / passing as f64)
    }

    pub fn standalone_accuracy(&self) -> f64 {
        self.correct_from[0] as f64 / self.n_samples() as f64
    }

    pub fn curve(&self, thresholds: &[f64]) -> Vec<CurvePoint> {
        thresholds
            .iter()
            .map(|&t| CurvePoint {
                threshold: t,
                pass_rate: self.pass_rate(t),
                conditional_accuracy: self.conditional_accuracy(t),
            })
            .collect()
    }
}

pub fn profile_exit(
    location_id: &str,
    outcomes: &[Outcome],
    source: CalibrationSource,
) -> Result<ExitProfile, ProfileError> {
    if outcomes.is_empty() {
        return Err(ProfileError::Empty);
    }
    let mut sorted: Vec<Outcome> = outcomes.to_vec();
    sorted.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
    let mut correct_from = vec![0u64; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        correct_from[i] = correct_from[i + 1] + u64::from(sorted[i].correct);
    }
    Ok(ExitProfile {
        location_id: location_id.to_string(),
        source,
        confidences: sorted.iter().map(|o| o.confidence).collect(),
        correct_from,
    })
}

/// Shrink early-exit thresholds found on training data. The final
/// classifier keeps its zero threshold; results may drop below the grid.
pub fn apply_correction(config: &ThresholdConfig, factor: f64) -> Result<ThresholdConfig, ProfileError> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(ProfileError::InvalidCorrection(factor));
    }
    Ok(ThresholdConfig::new(config.early().iter().map(|t| t * factor).collect()))
}

/// Twice the random-guess accuracy, capped at 1.
pub fn default_viability_floor(num_classes: u64) -> f64 {
    (2.0 / num_classes.max(1) as f64).min(1.0)
}

pub fn viability_filter(profile: &ExitProfile, floor: f64) -> bool {
    profile.standalone_accuracy() >= floor
}
