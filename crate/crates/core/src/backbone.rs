use crate::exits::{enumerate_exit_locations, synthesize_exit, ExitCandidate, ExitSite};
use crate::graph::{extract_classifier_blueprint, fuse_blocks, BlockGraph, Blueprint, GraphError, LayerGraph};
use crate::hardware::{self, HardwareError, Platform, SegmentLoad};
use crate::search_space::Mapping;

/// A parsed backbone with its block structure, classifier blueprint and
/// one synthesized exit branch per interior block boundary.
#[derive(Debug, Clone)]
pub struct Backbone {
    graph: LayerGraph,
    blocks: BlockGraph,
    blueprint: Blueprint,
    sites: Vec<ExitSite>,
    exits: Vec<ExitCandidate>,
}

impl Backbone {
    pub fn analyze(graph: LayerGraph) -> Result<Self, GraphError> {
        let blocks = fuse_blocks(&graph);
        let blueprint = extract_classifier_blueprint(&graph)?;
        let sites = enumerate_exit_locations(&blocks);
        let exits = sites.iter().map(|s| synthesize_exit(&blueprint, s, graph.element_bytes())).collect();
        Ok(Backbone { graph, blocks, blueprint, sites, exits })
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Backbone::analyze(LayerGraph::from_json(text)?)
    }

    pub fn graph(&self) -> &LayerGraph {
        &self.graph
    }

    pub fn blocks(&self) -> &BlockGraph {
        &self.blocks
    }

    pub fn blueprint(&self) -> &Blueprint {
        &self.blueprint
    }

    pub fn sites(&self) -> &[ExitSite] {
        &self.sites
    }

    pub fn exits(&self) -> &[ExitCandidate] {
        &self.exits
    }

    pub fn exit(&self, location: usize) -> &ExitCandidate {
        &self.exits[location]
    }

    pub fn location_count(&self) -> usize {
        self.sites.len()
    }

    pub fn total_macs(&self) -> u64 {
        self.blocks.total_macs()
    }

    pub fn num_classes(&self) -> u64 {
        self.blueprint.num_classes
    }

    /// Per-segment work for a mapping, including the exit branch that closes
    /// each early segment and the tensor handed over at each split.
    pub fn segment_loads(&self, mapping: &Mapping) -> Vec<SegmentLoad> {
        let blocks = self.blocks.blocks();
        mapping
            .segments
            .iter()
            .map(|seg| {
                let span = &blocks[seg.blocks.clone()];
                let exit = seg.exit.map(|loc| &self.exits[loc]);
                SegmentLoad {
                    processor: seg.processor,
                    macs: span.iter().map(|b| b.macs).sum::<u64>() + exit.map_or(0, |e| e.branch_macs),
                    inbound_bytes: match seg.blocks.start {
                        0 => 0,
                        s => blocks[s - 1].ofm_bytes,
                    },
                    params_bytes: span.iter().map(|b| b.params_bytes).sum::<u64>()
                        + exit.map_or(0, |e| e.branch_params_bytes),
                    peak_activation_bytes: span
                        .iter()
                        .map(|b| b.activation_bytes)
                        .chain(exit.map(|e| e.branch_activation_bytes))
                        .max()
                        .unwrap_or(0),
                }
            })
            .collect()
    }

    pub fn worst_case_latency(&self, mapping: &Mapping, plat: &Platform) -> Result<f64, HardwareError> {
        hardware::worst_case_latency(&self.segment_loads(mapping), plat)
    }
}
