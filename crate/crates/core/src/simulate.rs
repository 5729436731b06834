//! Replay of joint calibration records through a configured cascade.
//!
//! Unlike the predictor, the replay keeps each sample's outcomes at all
//! exits together, so correlation between exits shows up in the numbers.

use serde::{Deserialize, Serialize};

use crate::decision::{CascadeMetrics, StageCost, ThresholdConfig};
use crate::profiles::{Outcome, RecordSet, FINAL_LOCATION};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimulationError {
    #[error("no records for location {0:?}")]
    MissingLocation(String),
    #[error("expected {expected} early-exit thresholds, got {found}")]
    ConfigLength { expected: usize, found: usize },
    #[error("expected {expected} stage costs, got {found}")]
    StageCount { expected: usize, found: usize },
    #[error("no samples to replay")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedMetrics {
    #[serde(flatten)]
    pub metrics: CascadeMetrics,
    /// Samples terminating at each classifier, backbone last.
    pub histogram: Vec<u64>,
    pub n_samples: u64,
}

/// Run every sample through the cascade: it stops at the first exit whose
/// confidence reaches the threshold, otherwise at the backbone classifier.
pub fn simulate_cascade(
    exit_locations: &[&str],
    config: &ThresholdConfig,
    records: &RecordSet,
    stages: &[StageCost],
) -> Result<SimulatedMetrics, SimulationError> {
    let k = exit_locations.len();
    if config.early().len() != k {
        return Err(SimulationError::ConfigLength { expected: k, found: config.early().len() });
    }
    if stages.len() != k + 1 {
        return Err(SimulationError::StageCount { expected: k + 1, found: stages.len() });
    }
    let lookup = |id: &str| records.outcomes(id).ok_or_else(|| SimulationError::MissingLocation(id.to_string()));
    let columns: Vec<&[Outcome]> = exit_locations
        .iter()
        .map(|id| lookup(id))
        .chain(std::iter::once(lookup(FINAL_LOCATION)))
        .collect::<Result<_, _>>()?;
    let n = records.len();
    if n == 0 {
        return Err(SimulationError::Empty);
    }

    let mut histogram = vec![0u64; k + 1];
    let mut correct = 0u64;
    #[allow(clippy::needless_range_loop)] // walks one row across all columns
    for s in 0..n {
        let stop = (0..k).find(|&i| columns[i][s].confidence >= config.early()[i]).unwrap_or(k);
        histogram[stop] += 1;
        correct += u64::from(columns[stop][s].correct);
    }

    let nf = n as f64;
    let mut reached = n as u64;
    let mut m = CascadeMetrics {
        accuracy: correct as f64 / nf,
        mean_macs: 0.0,
        mean_latency_s: 0.0,
        mean_energy_mj: 0.0,
        termination_rates: histogram.iter().map(|&h| h as f64 / nf).collect(),
        scalar_cost: None,
    };
    for (stage, &stopped) in stages.iter().zip(&histogram) {
        let share = reached as f64 / nf;
        m.mean_macs += share * stage.macs;
        m.mean_latency_s += share * stage.latency_s;
        m.mean_energy_mj += share * stage.energy_mj;
        reached -= stopped;
    }
    Ok(SimulatedMetrics { metrics: m, histogram, n_samples: n as u64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub predicted: f64,
    pub simulated: f64,
    /// `simulated - predicted`.
    pub absolute: f64,
    /// `|absolute| / |predicted|`, or `|absolute|` when the prediction is 0.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub deltas: Vec<MetricDelta>,
}

impl Divergence {
    pub fn get(&self, metric: &str) -> Option<&MetricDelta> {
        self.deltas.iter().find(|d| d.metric == metric)
    }

    pub fn max_absolute(&self) -> f64 {
        self.deltas.iter().map(|d| d.absolute.abs()).fold(0.0, f64::max)
    }

    pub fn max_relative(&self) -> f64 {
        self.deltas.iter().map(|d| d.relative).fold(0.0, f64::max)
    }
}

fn delta(metric: String, predicted: f64, simulated: f64) -> MetricDelta {
    let absolute = simulated - predicted;
    let relative = if predicted != 0.0 { absolute.abs() / predicted.abs() } else { absolute.abs() };
    MetricDelta { metric, predicted, simulated, absolute, relative }
}

/// Per-metric difference between the independence-model prediction and the
/// replay.
pub fn compare(pred: &CascadeMetrics, sim: &SimulatedMetrics) -> Divergence {
    let s = &sim.metrics;
    let mut deltas = vec![
        delta("accuracy".into(), pred.accuracy, s.accuracy),
        delta("mean_macs".into(), pred.mean_macs, s.mean_macs),
        delta("mean_latency_s".into(), pred.mean_latency_s, s.mean_latency_s),
        delta("mean_energy_mj".into(), pred.mean_energy_mj, s.mean_energy_mj),
    ];
    for (i, (p, q)) in pred.termination_rates.iter().zip(&s.termination_rates).enumerate() {
        deltas.push(delta(format!("termination_rate[{i}]"), *p, *q));
    }
    Divergence { deltas }
}
