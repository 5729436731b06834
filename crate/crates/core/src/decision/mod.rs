//! Decision-mechanism search: per-exit confidence thresholds.
//!
//! Each architecture gets a layered graph with one node per candidate
//! threshold per early exit. Cascade metrics are predicted from per-exit
//! profiles assuming exits decide independently.

mod cascade;
mod graph;
mod grid;
mod solve;

pub use cascade::{
    predict_cascade, scalar_cost, score, stage_costs, Cascade, CascadeMetrics, EfficiencyMetric, PredictedMetrics,
    StageCost, Weights,
};
pub use graph::{build_search_graph, SearchGraph, SearchNode};
pub use grid::{ThresholdConfig, ThresholdGrid, DEFAULT_GRID_MAX, DEFAULT_GRID_MIN, DEFAULT_GRID_POINTS};
pub use solve::{exhaustive_thresholds, refine_thresholds, solve_thresholds, Solution, MAX_EXHAUSTIVE_EXITS};

use crate::hardware::HardwareError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecisionError {
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("weights must be finite and non-negative, got ({efficiency}, {accuracy})")]
    InvalidWeights { efficiency: f64, accuracy: f64 },
    #[error("expected {expected} early-exit thresholds, got {found}")]
    ConfigLength { expected: usize, found: usize },
    #[error("classifier {classifier} receives samples but none pass its threshold")]
    UndefinedAccuracy { classifier: usize },
    #[error("no threshold configuration has defined accuracy at every exit")]
    NoViableConfiguration,
    #[error("exhaustive search supports at most {max} early exits, got {exits}")]
    TooManyExits { exits: usize, max: usize },
    #[error("no calibration profile for location {0:?}")]
    MissingProfile(String),
    #[error(transparent)]
    Hardware(#[from] HardwareError),
}
