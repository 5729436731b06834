//! Post-training early-exit augmentation for models deployed on a chain of
//! heterogeneous processors.
//!
//! The pipeline: parse a backbone graph, fuse it into blocks, synthesize an
//! exit branch at every block boundary, enumerate and prune exit placements
//! against the platform, then pick per-exit confidence thresholds from
//! calibration profiles and rank the result by a scalar cost.

pub mod backbone;
pub mod decision;
pub mod exits;
pub mod graph;
pub mod hardware;
pub mod planner;
pub mod profiles;
pub mod search_space;
pub mod simulate;
pub mod synth;

pub use backbone::Backbone;
