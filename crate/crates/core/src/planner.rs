//! End-to-end search: enumerate exit placements, prune them against the
//! platform, solve thresholds for every survivor and rank by scalar cost.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::decision::{
    build_search_graph, predict_cascade, refine_thresholds, score, solve_thresholds, Cascade, CascadeMetrics,
    DecisionError, StageCost, ThresholdConfig, ThresholdGrid, Weights,
};
use crate::exits::DEFAULT_EXIT_BUDGET;
use crate::graph::GraphError;
use crate::hardware::{segment_energy_mj, segment_latency, HardwareError, Platform};
use crate::profiles::{
    apply_correction, default_viability_floor, viability_filter, CalibrationSource, ExitProfile, ProfileError,
    RecordSet, FINAL_LOCATION,
};
use crate::search_space::{enumerate_architectures, map_to_processors, prune, Architecture, RejectReason, Rejection};
use crate::simulate::{compare, simulate_cascade, Divergence, SimulatedMetrics, SimulationError};

pub const DEFAULT_CORRECTION: f64 = 0.9;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Hardware(#[from] HardwareError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("no architecture satisfies the constraints; binding constraint: {}", .0.constraint)]
    Infeasible(Box<Infeasibility>),
}

/// Why nothing survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Infeasibility {
    /// Constraint that rejected the most architectures.
    pub constraint: String,
    pub rejected: BTreeMap<String, usize>,
    /// Reason the plain backbone was rejected.
    pub backbone_only: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    pub weights: Weights,
    pub grid: ThresholdGrid,
    /// Threshold shrink factor for training-data calibration.
    pub correction: f64,
    pub source: CalibrationSource,
    /// Points per exit in the optional fine pass.
    pub refine: Option<usize>,
    /// Echoed into the report; the search itself is deterministic.
    pub seed: u64,
    pub workers: Option<usize>,
    pub max_exit_fraction: f64,
    /// Minimum standalone exit accuracy; defaults to twice random guessing.
    pub viability_floor: Option<f64>,
    /// Processor the backbone-alone reference runs on; defaults to the last.
    pub baseline_processor: Option<String>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            weights: Weights::default(),
            grid: ThresholdGrid::default(),
            correction: DEFAULT_CORRECTION,
            source: CalibrationSource::Validation,
            refine: None,
            seed: 0,
            workers: None,
            max_exit_fraction: DEFAULT_EXIT_BUDGET,
            viability_floor: None,
            baseline_processor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub processor: String,
    /// Half-open block index range.
    pub blocks: [usize; 2],
    pub first_block: String,
    pub last_block: String,
    /// Block id of the exit closing the segment.
    pub exit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub architecture: String,
    pub exit_locations: Vec<usize>,
    pub exit_blocks: Vec<String>,
    pub mapping: Vec<SegmentReport>,
    pub stages: Vec<StageCost>,
    /// Thresholds to deploy.
    pub thresholds: ThresholdConfig,
    /// Thresholds found on the calibration data, before any correction.
    pub searched_thresholds: ThresholdConfig,
    pub predicted: CascadeMetrics,
    pub worst_case_latency_s: f64,
    pub branch_macs: u64,
}

impl Candidate {
    pub fn scalar_cost(&self) -> f64 {
        self.predicted.scalar_cost.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub architecture: String,
    pub scalar_cost: f64,
    pub thresholds: ThresholdConfig,
    pub accuracy: f64,
    pub mean_macs: f64,
    pub early_termination: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub processor: String,
    pub metrics: CascadeMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    /// Share of mean MACs saved relative to the backbone.
    pub efficiency_gain: f64,
    /// Absolute accuracy change.
    pub accuracy_change: f64,
    /// Relative changes.
    pub mean_latency_change: f64,
    pub mean_energy_change: f64,
    pub early_termination: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub locations: usize,
    pub processors: usize,
    pub enumerated: usize,
    pub rejected: BTreeMap<String, usize>,
    pub evaluated: usize,
    /// Grid configurations covered, summed over evaluated architectures.
    pub threshold_configurations: u64,
    pub refined_configurations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub weights: Weights,
    pub grid: Vec<f64>,
    pub calibration_source: CalibrationSource,
    pub correction_factor: f64,
    pub correction_applied: bool,
    pub refine: Option<usize>,
    pub seed: u64,
    pub max_exit_fraction: f64,
    pub viability_floor: f64,
    pub baseline_processor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub model: String,
    pub chosen: Candidate,
    pub simulated: SimulatedMetrics,
    pub divergence: Divergence,
    pub baseline: Baseline,
    pub deltas: Deltas,
    /// False when the plain backbone won.
    pub augmented: bool,
    pub candidates: Vec<RankedCandidate>,
    pub pruning: Vec<Rejection>,
    pub search: SearchStats,
    pub config: ConfigEcho,
}

fn validate(opts: &PlanOptions, plat: &Platform) -> Result<usize, PlanError> {
    if !(opts.correction > 0.0 && opts.correction <= 1.0) {
        return Err(PlanError::InvalidOption(format!("correction factor must lie in (0, 1], got {}", opts.correction)));
    }
    if !(opts.max_exit_fraction > 0.0 && opts.max_exit_fraction.is_finite()) {
        return Err(PlanError::InvalidOption("exit budget fraction must be positive".into()));
    }
    if opts.refine == Some(0) {
        return Err(PlanError::InvalidOption("refinement resolution must be positive".into()));
    }
    if opts.workers == Some(0) {
        return Err(PlanError::InvalidOption("worker count must be positive".into()));
    }
    match &opts.baseline_processor {
        None => Ok(plat.len() - 1),
        Some(id) => {
            plat.position(id).ok_or_else(|| PlanError::InvalidOption(format!("unknown baseline processor {id:?}")))
        }
    }
}

struct Evaluated {
    candidate: Candidate,
    configurations: u64,
    refined: u64,
}

fn evaluate(
    arch: &Architecture,
    backbone: &Backbone,
    plat: &Platform,
    profiles: &BTreeMap<String, ExitProfile>,
    base: &CascadeMetrics,
    opts: &PlanOptions,
) -> Result<Result<Evaluated, RejectReason>, PlanError> {
    let cascade = Cascade::for_architecture(arch, backbone, plat, profiles)?;
    let graph = build_search_graph(arch.early_exits(), &opts.grid);
    let coarse = match solve_thresholds(&graph, &cascade, base, &opts.weights) {
        Ok(s) => s,
        Err(DecisionError::NoViableConfiguration) => return Ok(Err(RejectReason::NoViableThresholds)),
        Err(e) => return Err(e.into()),
    };
    let (solution, refined) = match opts.refine {
        Some(r) if r > 1 && arch.early_exits() > 0 => {
            let fine = refine_thresholds(&coarse, &opts.grid, &cascade, base, &opts.weights, r)?;
            let covered = fine.configurations as u64;
            (fine, covered)
        }
        _ => (coarse.clone(), 0),
    };
    let thresholds = match opts.source {
        CalibrationSource::Validation => solution.config.clone(),
        CalibrationSource::TrainingWithCorrection => apply_correction(&solution.config, opts.correction)?,
    };
    let mapping = map_to_processors(arch, backbone.blocks().len(), plat);
    let blocks = backbone.blocks().blocks();
    let segments = mapping
        .segments
        .iter()
        .map(|s| SegmentReport {
            processor: plat.processors()[s.processor].id.clone(),
            blocks: [s.blocks.start, s.blocks.end],
            first_block: blocks[s.blocks.start].id.clone(),
            last_block: blocks[s.blocks.end - 1].id.clone(),
            exit: s.exit.map(|l| backbone.exit(l).location_block_id.clone()),
        })
        .collect();
    let exits: Vec<_> = arch.exit_locations.iter().map(|&l| backbone.exit(l)).collect();
    Ok(Ok(Evaluated {
        candidate: Candidate {
            architecture: arch.id(),
            exit_locations: arch.exit_locations.clone(),
            exit_blocks: exits.iter().map(|e| e.location_block_id.clone()).collect(),
            mapping: segments,
            stages: cascade.stages().to_vec(),
            thresholds,
            searched_thresholds: solution.config,
            predicted: solution.metrics,
            worst_case_latency_s: backbone.worst_case_latency(&mapping, plat)?,
            branch_macs: exits.iter().map(|e| e.branch_macs).sum(),
        },
        configurations: coarse.configurations as u64,
        refined,
    }))
}

fn binding_constraint(rejected: &BTreeMap<String, usize>) -> String {
    const ORDER: [&str; 5] = ["latency", "memory", "exit-budget", "non-viable-exit", "no-viable-thresholds"];
    let mut best: Option<(usize, &str)> = None;
    for c in ORDER {
        if let Some(&n) = rejected.get(c) {
            if best.is_none_or(|(m, _)| n > m) {
                best = Some((n, c));
            }
        }
    }
    best.map_or("none", |(_, c)| c).to_string()
}

/// Full search over every exit placement of `backbone` on `plat`.
pub fn run_search(
    backbone: &Backbone,
    plat: &Platform,
    records: &RecordSet,
    opts: &PlanOptions,
) -> Result<PlanReport, PlanError> {
    let baseline_idx = validate(opts, plat)?;
    let profiles = records.profiles(opts.source);
    let final_profile =
        profiles.get(FINAL_LOCATION).ok_or_else(|| ProfileError::MissingLocation(FINAL_LOCATION.into()))?;

    // backbone alone on the reference processor
    let p = &plat.processors()[baseline_idx];
    let latency_s = segment_latency(backbone.total_macs(), p);
    let base_stage = StageCost {
        macs: backbone.total_macs() as f64,
        latency_s,
        energy_mj: segment_energy_mj(latency_s, baseline_idx, plat),
    };
    let raw = predict_cascade(&Cascade::new(vec![], final_profile, vec![base_stage]), &ThresholdConfig::new(vec![]))?;
    let base = score(raw.clone(), &raw, &opts.weights);

    let floor = opts.viability_floor.unwrap_or_else(|| default_viability_floor(backbone.num_classes()));
    let viability: Vec<Option<RejectReason>> = backbone
        .exits()
        .iter()
        .map(|e| {
            let profile = profiles.get(&e.location_block_id);
            match profile {
                Some(pr) if viability_filter(pr, floor) => None,
                _ => Some(RejectReason::NonViableExit {
                    location: e.location_block_id.clone(),
                    standalone_accuracy: profile.map(ExitProfile::standalone_accuracy),
                    floor,
                }),
            }
        })
        .collect();

    let archs = enumerate_architectures(backbone.location_count(), plat.len());
    let enumerated = archs.len();
    let outcome = prune(archs, plat, backbone, opts.max_exit_fraction)?;
    let mut rejections = outcome.rejected;
    let mut survivors = Vec::new();
    for arch in outcome.survivors {
        match arch.exit_locations.iter().find_map(|&l| viability[l].clone()) {
            Some(reason) => rejections.push(Rejection { architecture: arch.id(), reason }),
            None => survivors.push(arch),
        }
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| PlanError::InvalidOption(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        survivors.par_iter().map(|a| evaluate(a, backbone, plat, &profiles, &base, opts)).collect::<Result<Vec<_>, _>>()
    })?;

    let mut evaluated = Vec::new();
    let (mut configurations, mut refined) = (0u64, 0u64);
    for (arch, r) in survivors.iter().zip(results) {
        match r {
            Ok(e) => {
                configurations += e.configurations;
                refined += e.refined;
                evaluated.push(e.candidate);
            }
            Err(reason) => rejections.push(Rejection { architecture: arch.id(), reason }),
        }
    }

    let mut rejected: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rejections {
        *rejected.entry(r.reason.constraint().to_string()).or_default() += 1;
    }
    if evaluated.is_empty() {
        let backbone_only =
            rejections.iter().find(|r| r.architecture == Architecture::backbone_only().id()).map(|r| r.reason.clone());
        return Err(PlanError::Infeasible(Box::new(Infeasibility {
            constraint: binding_constraint(&rejected),
            rejected,
            backbone_only,
        })));
    }

    // stable: equal costs keep canonical enumeration order
    evaluated.sort_by(|a, b| a.scalar_cost().total_cmp(&b.scalar_cost()));
    let candidates = evaluated
        .iter()
        .enumerate()
        .map(|(i, c)| RankedCandidate {
            rank: i + 1,
            architecture: c.architecture.clone(),
            scalar_cost: c.scalar_cost(),
            thresholds: c.thresholds.clone(),
            accuracy: c.predicted.accuracy,
            mean_macs: c.predicted.mean_macs,
            early_termination: c.predicted.early_termination(),
        })
        .collect();
    let evaluated_count = evaluated.len();
    let chosen = evaluated.swap_remove(0);

    let exit_ids: Vec<&str> = chosen.exit_blocks.iter().map(String::as_str).collect();
    let simulated = simulate_cascade(&exit_ids, &chosen.searched_thresholds, records, &chosen.stages)?;
    let divergence = compare(&chosen.predicted, &simulated);
    let m = &chosen.predicted;
    let relative = |x: f64, b: f64| if b != 0.0 { x / b - 1.0 } else { 0.0 };
    let deltas = Deltas {
        efficiency_gain: 1.0 - m.mean_macs / base.mean_macs,
        accuracy_change: m.accuracy - base.accuracy,
        mean_latency_change: relative(m.mean_latency_s, base.mean_latency_s),
        mean_energy_change: relative(m.mean_energy_mj, base.mean_energy_mj),
        early_termination: m.early_termination(),
    };

    Ok(PlanReport {
        model: backbone.graph().name().to_string(),
        augmented: !chosen.exit_locations.is_empty(),
        chosen,
        simulated,
        divergence,
        baseline: Baseline { processor: p.id.clone(), metrics: base },
        deltas,
        candidates,
        pruning: rejections,
        search: SearchStats {
            locations: backbone.location_count(),
            processors: plat.len(),
            enumerated,
            rejected,
            evaluated: evaluated_count,
            threshold_configurations: configurations,
            refined_configurations: refined,
        },
        config: ConfigEcho {
            weights: opts.weights,
            grid: opts.grid.values().to_vec(),
            calibration_source: opts.source,
            correction_factor: opts.correction,
            correction_applied: opts.source == CalibrationSource::TrainingWithCorrection,
            refine: opts.refine,
            seed: opts.seed,
            max_exit_fraction: opts.max_exit_fraction,
            viability_floor: floor,
            baseline_processor: p.id.clone(),
        },
    })
}

fn si(v: f64) -> String {
    let a = v.abs();
    if a >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if a >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if a >= 1e3 {
        format!("{:.2}k", v / 1e3)
    } else {
        format!("{v:.2}")
    }
}

fn signed_pct(v: f64) -> String {
    format!("{:+.2}%", v * 100.0)
}

impl PlanReport {
    /// Human-readable comparison of the backbone and the chosen network.
    pub fn summary(&self) -> String {
        let b = &self.baseline.metrics;
        let m = &self.chosen.predicted;
        let d = &self.deltas;
        let mut out = String::new();
        let row = |out: &mut String, cells: [String; 6]| {
            let _ = writeln!(
                out,
                "{:<28} {:>11} {:>10} {:>11} {:>13} {:>12}",
                cells[0], cells[1], cells[2], cells[3], cells[4], cells[5]
            );
        };
        row(
            &mut out,
            ["Model", "Early Term.", "Accuracy", "Mean MACs", "Mean Latency", "Mean Energy"].map(String::from),
        );
        row(
            &mut out,
            [
                format!("{} ({})", self.model, self.baseline.processor),
                "-".into(),
                format!("{:.2}%", b.accuracy * 100.0),
                si(b.mean_macs),
                format!("{:.2} ms", b.mean_latency_s * 1e3),
                format!("{:.2} mJ", b.mean_energy_mj),
            ],
        );
        let procs: Vec<&str> = self.chosen.mapping.iter().map(|s| s.processor.as_str()).collect();
        row(
            &mut out,
            [
                format!("{} ({})", self.chosen.architecture, procs.join("+")),
                format!("{:.2}%", d.early_termination * 100.0),
                format!("{:.2}%", m.accuracy * 100.0),
                si(m.mean_macs),
                format!("{:.2} ms", m.mean_latency_s * 1e3),
                format!("{:.2} mJ", m.mean_energy_mj),
            ],
        );
        row(
            &mut out,
            [
                "change".into(),
                String::new(),
                format!("{:+.2} pp", d.accuracy_change * 100.0),
                signed_pct(-d.efficiency_gain),
                signed_pct(d.mean_latency_change),
                signed_pct(d.mean_energy_change),
            ],
        );
        let _ = writeln!(
            out,
            "\nthresholds {:?}, scalar cost {:.6}, {} of {} architectures evaluated, {} threshold configurations",
            self.chosen.thresholds.early(),
            self.chosen.scalar_cost(),
            self.search.evaluated,
            self.search.enumerated,
            self.search.threshold_configurations,
        );
        out
    }
}
