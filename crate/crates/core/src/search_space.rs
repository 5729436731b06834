//! Architecture enumeration, processor mapping and constraint pruning.
//!
//! An architecture is a strictly increasing set of exit locations. With
//! `P` processors it may hold at most `P - 1` early exits so that each
//! classifier closes the subgraph running on its own processor.

use std::fmt;
use std::ops::Range;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::exits::check_budget;
use crate::hardware::{memory_fit, worst_case_latency, HardwareError, Platform};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Architecture {
    pub exit_locations: Vec<usize>,
}

impl Architecture {
    pub fn backbone_only() -> Self {
        Architecture { exit_locations: Vec::new() }
    }

    pub fn new(mut exit_locations: Vec<usize>) -> Self {
        exit_locations.sort_unstable();
        exit_locations.dedup();
        Architecture { exit_locations }
    }

    pub fn early_exits(&self) -> usize {
        self.exit_locations.len()
    }

    pub fn classifier_count(&self) -> usize {
        self.exit_locations.len() + 1
    }

    pub fn is_backbone_only(&self) -> bool {
        self.exit_locations.is_empty()
    }

    /// Canonical identifier, e.g. `backbone` or `ee:3,17`.
    pub fn id(&self) -> String {
        self.to_string()
    }

    pub fn without_exit(&self, location: usize) -> Self {
        Architecture { exit_locations: self.exit_locations.iter().copied().filter(|&l| l != location).collect() }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exit_locations.is_empty() {
            f.write_str("backbone")
        } else {
            write!(f, "ee:{}", self.exit_locations.iter().join(","))
        }
    }
}

/// Backbone-only plus every location subset of size 1..processors-1,
/// ordered by size and then lexicographically.
pub fn enumerate_architectures(locations: usize, processors: usize) -> Vec<Architecture> {
    let max_exits = processors.saturating_sub(1).min(locations);
    (0..=max_exits)
        .flat_map(|k| (0..locations).combinations(k))
        .map(|exit_locations| Architecture { exit_locations })
        .collect()
}

/// Size of the enumeration without materializing it.
pub fn architecture_count(locations: usize, processors: usize) -> u128 {
    let max_exits = processors.saturating_sub(1).min(locations);
    (0..=max_exits).map(|k| binomial(locations as u128, k as u128)).sum()
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// Half-open range of block indices.
    pub blocks: Range<usize>,
    pub processor: usize,
    /// Location index of the early exit closing this segment.
    pub exit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub segments: Vec<Segment>,
}

impl Mapping {
    pub fn processors(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().map(|s| s.processor)
    }
}

/// Subgraph `k` (closed by exit `k`, or by the output) runs on processor `k`.
/// Processors past the last classifier stay idle.
///
/// Panics if the architecture has more classifiers than the platform has
/// processors or a location outside `0..block_count - 1`.
pub fn map_to_processors(arch: &Architecture, block_count: usize, plat: &Platform) -> Mapping {
    assert!(arch.classifier_count() <= plat.len(), "{arch} needs more processors than available");
    let mut segments = Vec::with_capacity(arch.classifier_count());
    let mut start = 0;
    for (k, &loc) in arch.exit_locations.iter().enumerate() {
        assert!(loc + 1 < block_count, "exit location {loc} is not an interior boundary");
        segments.push(Segment { blocks: start..loc + 1, processor: k, exit: Some(loc) });
        start = loc + 1;
    }
    segments.push(Segment { blocks: start..block_count, processor: arch.exit_locations.len(), exit: None });
    Mapping { segments }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "kebab-case")]
pub enum RejectReason {
    Latency {
        worst_case_s: f64,
        budget_s: f64,
    },
    Memory {
        segment: usize,
        processor: String,
        params_bytes: u64,
        peak_activation_bytes: u64,
    },
    ExitBudget {
        branch_macs: u64,
        backbone_macs: u64,
        max_fraction: f64,
    },
    /// An exit's standalone accuracy is below the floor, or it has no records.
    NonViableExit {
        location: String,
        standalone_accuracy: Option<f64>,
        floor: f64,
    },
    /// Every threshold configuration leaves some exit without passers.
    NoViableThresholds,
}

impl RejectReason {
    pub fn constraint(&self) -> &'static str {
        match self {
            RejectReason::Latency { .. } => "latency",
            RejectReason::Memory { .. } => "memory",
            RejectReason::ExitBudget { .. } => "exit-budget",
            RejectReason::NonViableExit { .. } => "non-viable-exit",
            RejectReason::NoViableThresholds => "no-viable-thresholds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub architecture: String,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default)]
pub struct PruneOutcome {
    pub survivors: Vec<Architecture>,
    pub rejected: Vec<Rejection>,
}

/// First violated constraint of an architecture, if any: worst-case
/// latency, then per-segment memory, then the total exit-branch budget.
pub fn check_constraints(
    arch: &Architecture,
    plat: &Platform,
    backbone: &Backbone,
    max_exit_fraction: f64,
) -> Result<Option<RejectReason>, HardwareError> {
    let mapping = map_to_processors(arch, backbone.blocks().len(), plat);
    let loads = backbone.segment_loads(&mapping);
    let worst = worst_case_latency(&loads, plat)?;
    if worst > plat.latency_budget_s() {
        return Ok(Some(RejectReason::Latency { worst_case_s: worst, budget_s: plat.latency_budget_s() }));
    }
    for (i, load) in loads.iter().enumerate() {
        let p = &plat.processors()[load.processor];
        if !memory_fit(load.params_bytes, load.peak_activation_bytes, p) {
            return Ok(Some(RejectReason::Memory {
                segment: i,
                processor: p.id.clone(),
                params_bytes: load.params_bytes,
                peak_activation_bytes: load.peak_activation_bytes,
            }));
        }
    }
    let exits = arch.exit_locations.iter().map(|&l| backbone.exit(l));
    if !check_budget(exits.clone(), backbone.total_macs(), max_exit_fraction) {
        return Ok(Some(RejectReason::ExitBudget {
            branch_macs: exits.map(|e| e.branch_macs).sum(),
            backbone_macs: backbone.total_macs(),
            max_fraction: max_exit_fraction,
        }));
    }
    Ok(None)
}

/// Keep the architectures that satisfy every constraint, in input order.
pub fn prune(
    archs: Vec<Architecture>,
    plat: &Platform,
    backbone: &Backbone,
    max_exit_fraction: f64,
) -> Result<PruneOutcome, HardwareError> {
    let mut out = PruneOutcome::default();
    for arch in archs {
        match check_constraints(&arch, plat, backbone, max_exit_fraction)? {
            None => out.survivors.push(arch),
            Some(reason) => out.rejected.push(Rejection { architecture: arch.id(), reason }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::{Link, ProcessorSpec};

    fn platform(n: usize) -> Platform {
        let procs: Vec<_> = (0..n)
            .map(|i| ProcessorSpec {
                id: format!("p{i}"),
                macs_per_second: 1e6,
                mem_bytes: 1 << 30,
                storage_bytes: 1 << 30,
                active_power_mw: 1.0,
                sleep_power_mw: 0.0,
            })
            .collect();
        let links =
            (1..n).map(|i| Link { from: format!("p{}", i - 1), to: format!("p{i}"), bytes_per_second: 1e6 }).collect();
        Platform::new(procs, links, 1.0).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_architectures(74, 3).len(), 2776);
        assert_eq!(enumerate_architectures(5, 2).len(), 6);
        assert_eq!(enumerate_architectures(0, 4), vec![Architecture::backbone_only()]);
        assert_eq!(architecture_count(74, 3), 2776);
        // more processors than locations can use
        assert_eq!(enumerate_architectures(2, 5).len(), 4);
    }

    #[test]
    fn enumeration_order_is_canonical() {
        let ids: Vec<String> = enumerate_architectures(3, 3).iter().map(Architecture::id).collect();
        assert_eq!(ids, ["backbone", "ee:0", "ee:1", "ee:2", "ee:0,1", "ee:0,2", "ee:1,2"]);
    }

    #[test]
    fn mapping_examples() {
        let plat = platform(2);
        let m = map_to_processors(&Architecture::new(vec![1]), 4, &plat);
        assert_eq!(
            m.segments,
            vec![
                Segment { blocks: 0..2, processor: 0, exit: Some(1) },
                Segment { blocks: 2..4, processor: 1, exit: None },
            ]
        );
        let m = map_to_processors(&Architecture::backbone_only(), 4, &plat);
        assert_eq!(m.segments, vec![Segment { blocks: 0..4, processor: 0, exit: None }]);

        let m = map_to_processors(&Architecture::new(vec![0, 2]), 5, &platform(3));
        let spans: Vec<_> = m.segments.iter().map(|s| (s.blocks.clone(), s.processor)).collect();
        assert_eq!(spans, [(0..1, 0), (1..3, 1), (3..5, 2)]);
    }

    #[test]
    #[should_panic]
    fn mapping_rejects_too_many_classifiers() {
        map_to_processors(&Architecture::new(vec![0, 1]), 4, &platform(2));
    }
}
