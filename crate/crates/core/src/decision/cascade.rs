use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DecisionError, ThresholdConfig};
use crate::backbone::Backbone;
use crate::hardware::{segment_energy_mj, stage_latency, HardwareError, Platform};
use crate::profiles::{ExitProfile, FINAL_LOCATION};
use crate::search_space::{map_to_processors, Architecture, Mapping};

/// Cost a sample pays for reaching classifier `i`: the segment that ends
/// at it, its exit branch and the inbound transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub macs: f64,
    pub latency_s: f64,
    pub energy_mj: f64,
}

pub fn stage_costs(backbone: &Backbone, mapping: &Mapping, plat: &Platform) -> Result<Vec<StageCost>, HardwareError> {
    backbone
        .segment_loads(mapping)
        .iter()
        .map(|load| {
            let latency_s = stage_latency(load, plat)?;
            Ok(StageCost {
                macs: load.macs as f64,
                latency_s,
                energy_mj: segment_energy_mj(latency_s, load.processor, plat),
            })
        })
        .collect()
}

/// Quantity the efficiency half of the scalar cost is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EfficiencyMetric {
    #[default]
    Macs,
    Latency,
    Energy,
}

impl EfficiencyMetric {
    pub fn of_stage(self, s: &StageCost) -> f64 {
        match self {
            EfficiencyMetric::Macs => s.macs,
            EfficiencyMetric::Latency => s.latency_s,
            EfficiencyMetric::Energy => s.energy_mj,
        }
    }

    pub fn of_metrics(self, m: &CascadeMetrics) -> f64 {
        match self {
            EfficiencyMetric::Macs => m.mean_macs,
            EfficiencyMetric::Latency => m.mean_latency_s,
            EfficiencyMetric::Energy => m.mean_energy_mj,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub efficiency: f64,
    pub accuracy: f64,
    #[serde(default)]
    pub metric: EfficiencyMetric,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { efficiency: 0.9, accuracy: 0.1, metric: EfficiencyMetric::Macs }
    }
}

impl Weights {
    pub fn new(efficiency: f64, accuracy: f64) -> Result<Self, DecisionError> {
        if !(efficiency >= 0.0 && accuracy >= 0.0) || !efficiency.is_finite() || !accuracy.is_finite() {
            return Err(DecisionError::InvalidWeights { efficiency, accuracy });
        }
        Ok(Weights { efficiency, accuracy, metric: EfficiencyMetric::Macs })
    }

    pub fn with_metric(self, metric: EfficiencyMetric) -> Self {
        Weights { metric, ..self }
    }
}

/// Expected behaviour of a cascade over the calibration population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeMetrics {
    pub accuracy: f64,
    pub mean_macs: f64,
    pub mean_latency_s: f64,
    pub mean_energy_mj: f64,
    /// One entry per classifier, backbone last.
    pub termination_rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar_cost: Option<f64>,
}

pub type PredictedMetrics = CascadeMetrics;

impl CascadeMetrics {
    pub fn early_termination(&self) -> f64 {
        match self.termination_rates.split_last() {
            Some((_, early)) => early.iter().fold(0.0, |a, r| a + r),
            None => 0.0,
        }
    }
}

/// Profiles and stage costs of one architecture, classifiers in order.
#[derive(Debug, Clone)]
pub struct Cascade<'a> {
    exits: Vec<&'a ExitProfile>,
    final_profile: &'a ExitProfile,
    stages: Vec<StageCost>,
}

impl<'a> Cascade<'a> {
    /// Panics unless there is one stage per classifier.
    pub fn new(exits: Vec<&'a ExitProfile>, final_profile: &'a ExitProfile, stages: Vec<StageCost>) -> Self {
        assert_eq!(stages.len(), exits.len() + 1, "one stage per classifier");
        Cascade { exits, final_profile, stages }
    }

    /// Look up the profiles of an architecture's exits by block id.
    pub fn for_architecture(
        arch: &Architecture,
        backbone: &Backbone,
        plat: &Platform,
        profiles: &'a BTreeMap<String, ExitProfile>,
    ) -> Result<Self, DecisionError> {
        let lookup = |id: &str| profiles.get(id).ok_or_else(|| DecisionError::MissingProfile(id.to_string()));
        let exits = arch
            .exit_locations
            .iter()
            .map(|&l| lookup(&backbone.exit(l).location_block_id))
            .collect::<Result<Vec<_>, _>>()?;
        let final_profile = lookup(FINAL_LOCATION)?;
        let mapping = map_to_processors(arch, backbone.blocks().len(), plat);
        Ok(Cascade::new(exits, final_profile, stage_costs(backbone, &mapping, plat)?))
    }

    pub fn early_exits(&self) -> usize {
        self.exits.len()
    }

    pub fn exit(&self, i: usize) -> &'a ExitProfile {
        self.exits[i]
    }

    pub fn final_profile(&self) -> &'a ExitProfile {
        self.final_profile
    }

    pub fn stages(&self) -> &[StageCost] {
        &self.stages
    }

    /// Same cascade with the backbone alone.
    pub fn backbone_stage(&self) -> StageCost {
        let sum = |f: fn(&StageCost) -> f64| self.stages.iter().map(f).sum();
        StageCost { macs: sum(|s| s.macs), latency_s: sum(|s| s.latency_s), energy_mj: sum(|s| s.energy_mj) }
    }
}

/// Expected metrics assuming exits decide independently: a sample reaches
/// classifier `i` with probability `S_i = prod_{j<i} (1 - p_j)` and stops
/// there with probability `S_i * p_i`.
pub fn predict_cascade(cascade: &Cascade, config: &ThresholdConfig) -> Result<CascadeMetrics, DecisionError> {
    let k = cascade.early_exits();
    if config.early().len() != k {
        return Err(DecisionError::ConfigLength { expected: k, found: config.early().len() });
    }
    let mut survive = 1.0;
    let mut m = CascadeMetrics {
        accuracy: 0.0,
        mean_macs: 0.0,
        mean_latency_s: 0.0,
        mean_energy_mj: 0.0,
        termination_rates: Vec::with_capacity(k + 1),
        scalar_cost: None,
    };
    for (i, stage) in cascade.stages.iter().enumerate() {
        m.mean_macs += survive * stage.macs;
        m.mean_latency_s += survive * stage.latency_s;
        m.mean_energy_mj += survive * stage.energy_mj;
        let (p, acc) = match cascade.exits.get(i) {
            Some(profile) => {
                let t = config.early()[i];
                (profile.pass_rate(t), profile.conditional_accuracy(t))
            }
            None => (1.0, Some(cascade.final_profile.standalone_accuracy())),
        };
        let rate = survive * p;
        if rate > 0.0 {
            m.accuracy += rate * acc.ok_or(DecisionError::UndefinedAccuracy { classifier: i })?;
        }
        m.termination_rates.push(rate);
        survive *= 1.0 - p;
    }
    Ok(m)
}

/// Weighted normalized efficiency plus accuracy drop; lower is better.
pub fn scalar_cost(m: &CascadeMetrics, base: &CascadeMetrics, weights: &Weights) -> f64 {
    let base_eff = weights.metric.of_metrics(base);
    let ratio = if base_eff > 0.0 { weights.metric.of_metrics(m) / base_eff } else { 0.0 };
    weights.efficiency * ratio + weights.accuracy * (base.accuracy - m.accuracy).max(0.0)
}

/// Metrics plus their scalar cost.
pub fn score(mut m: CascadeMetrics, base: &CascadeMetrics, weights: &Weights) -> CascadeMetrics {
    m.scalar_cost = Some(scalar_cost(&m, base, weights));
    m
}
