//! Exit branch synthesis.
//!
//! Every interior block boundary gets one branch: stride-2 average pools
//! until the feature map is no larger than the classifier head's native
//! input, followed by a copy of the head itself.

use serde::{Deserialize, Serialize};

use crate::graph::{BlockGraph, Blueprint, BlueprintLayer, LayerKind, Shape};

/// Default cap on total branch MACs relative to the backbone.
pub const DEFAULT_EXIT_BUDGET: f64 = 0.005;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExitError {
    #[error("exit at {location:?} needs {branch_macs} MACs, over {max_fraction} of {backbone_macs}")]
    BudgetExceeded { location: String, branch_macs: u64, backbone_macs: u64, max_fraction: f64 },
}

/// Attachment point of a candidate exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSite {
    /// Position among the interior boundaries (0 = after the first block).
    pub index: usize,
    pub block_id: String,
    pub ifm_shape: Shape,
    /// Backbone MACs up to and including the attachment block.
    pub cum_backbone_macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchLayer {
    pub kind: LayerKind,
    pub output_shape: Shape,
    pub macs: u64,
    pub params_bytes: u64,
    pub activation_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitCandidate {
    pub location_block_id: String,
    pub location_index: usize,
    pub ifm_shape: Shape,
    pub cum_backbone_macs: u64,
    pub branch_layers: Vec<BranchLayer>,
    pub branch_macs: u64,
    pub branch_params_bytes: u64,
    pub branch_activation_bytes: u64,
    pub num_classes: u64,
}

impl ExitCandidate {
    /// Number of downsampling pools in front of the classifier body.
    pub fn downsampling_steps(&self, blueprint_len: usize) -> usize {
        self.branch_layers.len().saturating_sub(blueprint_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitBudget {
    pub backbone_macs: u64,
    pub max_fraction: f64,
}

/// Interior block boundaries in topological order; the final block (which
/// holds the backbone classifier) is never a location.
pub fn enumerate_exit_locations(bg: &BlockGraph) -> Vec<ExitSite> {
    let mut cum = 0;
    bg.blocks()
        .iter()
        .take(bg.boundary_count())
        .enumerate()
        .map(|(index, b)| {
            cum += b.macs;
            ExitSite { index, block_id: b.id.clone(), ifm_shape: b.ofm_shape.clone(), cum_backbone_macs: cum }
        })
        .collect()
}

/// Instantiate the blueprint at `site` without a budget check.
pub fn synthesize_exit(bp: &Blueprint, site: &ExitSite, element_bytes: u64) -> ExitCandidate {
    let mut layers = Vec::new();
    let mut shape = site.ifm_shape.clone();
    let act = |s: &Shape| s.elements() * element_bytes;

    while shape.spatial_area() > bp.target_area() {
        shape = shape.halved();
        layers.push(BranchLayer {
            kind: LayerKind::Pool,
            activation_bytes: act(&shape),
            output_shape: shape.clone(),
            macs: 0,
            params_bytes: 0,
        });
    }

    for layer in &bp.layers {
        let (kind, out, macs, params) = match *layer {
            BlueprintLayer::GlobalPool => {
                if shape.spatial_dims().is_empty() {
                    continue;
                }
                (LayerKind::Pool, shape.pooled_globally(), 0, 0)
            }
            BlueprintLayer::Flatten => (LayerKind::Reshape, Shape::new([shape.elements()]), 0, 0),
            BlueprintLayer::Dense { units } => {
                let out = Shape::new([units.resolve(bp.num_classes)]);
                let (m, p) = crate::graph::document_costs(LayerKind::Dense, &out, &shape, &[]);
                (LayerKind::Dense, out, m, p * element_bytes)
            }
            BlueprintLayer::PointwiseConv { filters } => {
                let mut dims = shape.spatial_dims().to_vec();
                dims.push(filters.resolve(bp.num_classes));
                let out = Shape::new(dims);
                let kernel = vec![1; out.spatial_dims().len()];
                let (m, p) = crate::graph::document_costs(LayerKind::Conv, &out, &shape, &kernel);
                (LayerKind::Conv, out, m, p * element_bytes)
            }
            BlueprintLayer::Activation => (LayerKind::Activation, shape.clone(), 0, 0),
            BlueprintLayer::Softmax => (LayerKind::Softmax, shape.clone(), 0, 0),
        };
        layers.push(BranchLayer {
            kind,
            activation_bytes: act(&out),
            output_shape: out.clone(),
            macs,
            params_bytes: params,
        });
        shape = out;
    }

    ExitCandidate {
        location_block_id: site.block_id.clone(),
        location_index: site.index,
        ifm_shape: site.ifm_shape.clone(),
        cum_backbone_macs: site.cum_backbone_macs,
        branch_macs: layers.iter().map(|l| l.macs).sum(),
        branch_params_bytes: layers.iter().map(|l| l.params_bytes).sum(),
        branch_activation_bytes: layers.iter().map(|l| l.activation_bytes).max().unwrap_or(0),
        num_classes: shape.channels(),
        branch_layers: layers,
    }
}

/// Build the branch for one location, rejecting it if it alone breaks the budget.
pub fn build_exit_branch(
    bp: &Blueprint,
    site: &ExitSite,
    element_bytes: u64,
    budget: &ExitBudget,
) -> Result<ExitCandidate, ExitError> {
    let exit = synthesize_exit(bp, site, element_bytes);
    if !check_budget([&exit], budget.backbone_macs, budget.max_fraction) {
        return Err(ExitError::BudgetExceeded {
            location: site.block_id.clone(),
            branch_macs: exit.branch_macs,
            backbone_macs: budget.backbone_macs,
            max_fraction: budget.max_fraction,
        });
    }
    Ok(exit)
}

/// Strict test Σ branch_macs < max_fraction · backbone_macs.
pub fn check_budget<'a>(
    exits: impl IntoIterator<Item = &'a ExitCandidate>,
    backbone_macs: u64,
    max_fraction: f64,
) -> bool {
    debug_assert!(backbone_macs > 0);
    let total: u64 = exits.into_iter().map(|e| e.branch_macs).sum();
    // Dividing keeps the exact-boundary case exact: both sides round to
    // the same double when the ratio equals the fraction.
    (total as f64 / backbone_macs as f64) < max_fraction
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{fuse_blocks, Width};

    fn blueprint(classes: u64, input: Shape) -> Blueprint {
        Blueprint {
            layers: vec![
                BlueprintLayer::GlobalPool,
                BlueprintLayer::Dense { units: Width::Classes },
                BlueprintLayer::Softmax,
            ],
            num_classes: classes,
            input_shape: input,
        }
    }

    fn site(shape: Shape) -> ExitSite {
        ExitSite { index: 0, block_id: "b".into(), ifm_shape: shape, cum_backbone_macs: 1 }
    }

    fn with_macs(m: u64) -> ExitCandidate {
        let mut e = synthesize_exit(&blueprint(10, Shape::new([4, 4, 8])), &site(Shape::new([4, 4, 8])), 4);
        e.branch_macs = m;
        e
    }

    #[test]
    fn small_ifm_needs_no_downsampling() {
        let bp = blueprint(10, Shape::new([4, 4, 64]));
        let e = synthesize_exit(&bp, &site(Shape::new([4, 4, 64])), 4);
        assert_eq!(e.downsampling_steps(bp.layers.len()), 0);
        let kinds: Vec<_> = e.branch_layers.iter().map(|l| l.kind).collect();
        assert_eq!(kinds, [LayerKind::Pool, LayerKind::Dense, LayerKind::Softmax]);
        assert_eq!(e.branch_macs, 64 * 10);
        assert_eq!(e.num_classes, 10);
    }

    #[test]
    fn large_ifm_halves_to_target() {
        let bp = blueprint(10, Shape::new([4, 4, 64]));
        let e = synthesize_exit(&bp, &site(Shape::new([32, 32, 16])), 4);
        // 32 -> 16 -> 8 -> 4
        assert_eq!(e.downsampling_steps(bp.layers.len()), 3);
        assert_eq!(e.branch_layers[2].output_shape, Shape::new([4, 4, 16]));
        assert_eq!(e.branch_macs, 16 * 10);
    }

    #[test]
    fn vector_ifm_is_left_alone() {
        let bp = blueprint(10, Shape::new([4, 4, 64]));
        let e = synthesize_exit(&bp, &site(Shape::new([128])), 4);
        assert_eq!(e.downsampling_steps(bp.layers.len() - 1), 0);
        assert_eq!(e.branch_layers[0].kind, LayerKind::Dense);
        assert_eq!(e.branch_macs, 1280);
    }

    #[test]
    fn budget_is_strict() {
        let backbone = 1_000_000;
        assert!(check_budget(&[with_macs(1000), with_macs(1000)], backbone, DEFAULT_EXIT_BUDGET));
        assert!(!check_budget(&[with_macs(5000)], backbone, DEFAULT_EXIT_BUDGET));
        assert!(check_budget(&[with_macs(4999)], backbone, DEFAULT_EXIT_BUDGET));
        assert!(check_budget(&[], backbone, DEFAULT_EXIT_BUDGET));
        // the exact boundary stays exclusive on awkward backbone sizes too
        for backbone in [200u64, 7_000, 123_400, 9_999_800] {
            let exact = backbone / 200;
            assert!(!check_budget(&[with_macs(exact)], backbone, DEFAULT_EXIT_BUDGET), "{backbone}");
        }
    }

    #[test]
    fn build_rejects_over_budget_branch() {
        let bp = blueprint(10, Shape::new([4, 4, 64]));
        let s = site(Shape::new([4, 4, 64]));
        let ok = ExitBudget { backbone_macs: 1_000_000, max_fraction: DEFAULT_EXIT_BUDGET };
        assert!(build_exit_branch(&bp, &s, 4, &ok).is_ok());
        let tight = ExitBudget { backbone_macs: 10_000, max_fraction: DEFAULT_EXIT_BUDGET };
        assert!(matches!(
            build_exit_branch(&bp, &s, 4, &tight),
            Err(ExitError::BudgetExceeded { branch_macs: 640, .. })
        ));
    }

    #[test]
    fn locations_exclude_final_block() {
        let g = crate::graph::LayerGraph::from_json(
            r#"{"name":"three","layers":[
                {"id":"in","kind":"input","shape":[8,8,3]},
                {"id":"c1","kind":"conv","shape":[8,8,4],"inputs":["in"]},
                {"id":"c2","kind":"conv","shape":[8,8,4],"inputs":["c1"]},
                {"id":"fc","kind":"dense","shape":[2],"inputs":["c2"]},
                {"id":"out","kind":"output","shape":[2],"inputs":["fc"]}
            ]}"#,
        )
        .unwrap();
        let sites = enumerate_exit_locations(&fuse_blocks(&g));
        let ids: Vec<_> = sites.iter().map(|s| s.block_id.as_str()).collect();
        assert_eq!(ids, ["c1", "c2"]);
        assert!(sites[0].cum_backbone_macs < sites[1].cum_backbone_macs);
    }
}
