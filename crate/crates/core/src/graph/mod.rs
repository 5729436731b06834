//! Layer- and block-level model representations.
//!
//! A model document is parsed into a [`LayerGraph`] (one node per layer,
//! annotated with MAC, parameter and activation costs). [`fuse_blocks`]
//! coarsens it into a [`BlockGraph`] whose interior boundaries are the
//! candidate early-exit locations, and [`extract_classifier_blueprint`]
//! recovers the classifier head that exit branches are cloned from.
//!
//! Only chain topologies with residual fork/join regions are accepted.

mod blueprint;
mod document;
mod fuse;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use blueprint::{extract_classifier_blueprint, Blueprint, BlueprintLayer, Width};
pub(crate) use document::compute_costs as document_costs;
pub use document::{LayerDocument, ModelDocument, DEFAULT_ELEMENT_BYTES};
pub use fuse::{fuse_blocks, Block, BlockGraph, BlockKind};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("malformed model document: {0}")]
    Malformed(String),
    #[error("duplicate layer id {0:?}")]
    DuplicateId(String),
    #[error("dangling predecessor: layer {layer:?} references missing id {missing:?}")]
    DanglingPredecessor { layer: String, missing: String },
    #[error("cycle detected involving layer {0:?}")]
    Cycle(String),
    #[error("expected exactly one input layer, found {0}")]
    InputCount(usize),
    #[error("expected exactly one output layer, found {0}")]
    OutputCount(usize),
    #[error("layer {layer:?} has negative {field}")]
    NegativeCost { layer: String, field: &'static str },
    #[error("layer {layer:?}: {reason}")]
    InvalidLayer { layer: String, reason: String },
    #[error("unsupported topology at layer {layer:?}: {reason}")]
    UnsupportedTopology { layer: String, reason: String },
    #[error("no recognizable classifier head before the output layer")]
    NoClassifierHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    Dense,
    Pool,
    Add,
    Activation,
    Batchnorm,
    Reshape,
    Softmax,
    Input,
    Output,
}

impl LayerKind {
    /// Kinds that carry weights and MAC cost.
    pub fn is_compute(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::Dense)
    }

    /// Kinds that fuse into the preceding compute layer's block.
    pub fn is_post_processing(self) -> bool {
        matches!(
            self,
            LayerKind::Activation | LayerKind::Batchnorm | LayerKind::Pool | LayerKind::Reshape | LayerKind::Softmax
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise-conv",
            LayerKind::Dense => "dense",
            LayerKind::Pool => "pool",
            LayerKind::Add => "add",
            LayerKind::Activation => "activation",
            LayerKind::Batchnorm => "batchnorm",
            LayerKind::Reshape => "reshape",
            LayerKind::Softmax => "softmax",
            LayerKind::Input => "input",
            LayerKind::Output => "output",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tensor shape, spatial dimensions first and channels last.
///
/// A rank-1 shape is a plain feature vector without spatial extent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape(pub Vec<u64>);

impl Shape {
    pub fn new(dims: impl Into<Vec<u64>>) -> Self {
        Shape(dims.into())
    }

    pub fn dims(&self) -> &[u64] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn channels(&self) -> u64 {
        self.0.last().copied().unwrap_or(1)
    }

    pub fn spatial_dims(&self) -> &[u64] {
        match self.0.split_last() {
            Some((_, spatial)) => spatial,
            None => &[],
        }
    }

    /// Product of the spatial dimensions; 1 for vectors.
    pub fn spatial_area(&self) -> u64 {
        self.spatial_dims().iter().product()
    }

    pub fn elements(&self) -> u64 {
        self.0.iter().product()
    }

    /// Shape after a kernel-2, stride-2 pooling step (odd sizes round up).
    pub fn halved(&self) -> Shape {
        let mut dims: Vec<u64> = self.spatial_dims().iter().map(|d| d.div_ceil(2)).collect();
        dims.push(self.channels());
        Shape(dims)
    }

    /// Same rank with every spatial dimension collapsed to 1.
    pub fn pooled_globally(&self) -> Shape {
        let mut dims = vec![1; self.spatial_dims().len()];
        dims.push(self.channels());
        Shape(dims)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: String,
    pub kind: LayerKind,
    pub output_shape: Shape,
    /// Spatial kernel extent for convolutions; all ones when not given.
    pub kernel: Vec<u64>,
    pub macs: u64,
    pub params_bytes: u64,
    pub activation_bytes: u64,
    pub predecessors: Vec<String>,
}

/// Validated layer DAG stored in a topological order that walks the main
/// chain and visits each residual region arm by arm before its join.
#[derive(Debug, Clone)]
pub struct LayerGraph {
    name: String,
    element_bytes: u64,
    nodes: Vec<LayerNode>,
    index: HashMap<String, usize>,
    successors: Vec<Vec<usize>>,
    units: Vec<fuse::Unit>,
}

impl LayerGraph {
    /// Parse and validate a model document given as JSON text.
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
        parse_model_graph(doc)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn element_bytes(&self) -> u64 {
        self.element_bytes
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn successors(&self, id: &str) -> impl Iterator<Item = &LayerNode> {
        let idx = self.index.get(id).copied();
        idx.into_iter().flat_map(move |i| self.successors[i].iter().map(move |&s| &self.nodes[s]))
    }

    pub fn input(&self) -> &LayerNode {
        &self.nodes[0]
    }

    pub fn output(&self) -> &LayerNode {
        self.nodes.last().expect("validated graph has an output")
    }

    pub fn total_macs(&self) -> u64 {
        self.nodes.iter().map(|n| n.macs).sum()
    }

    pub(crate) fn units(&self) -> &[fuse::Unit] {
        &self.units
    }

    /// Re-serialize into a model document (costs included explicitly).
    pub fn to_document(&self) -> ModelDocument {
        ModelDocument::from_graph(self)
    }
}

/// Validate a parsed document and build the layer graph.
///
/// MAC counts of compute layers are recomputed from shapes when the document
/// omits them; parameter and activation byte counts default likewise.
pub fn parse_model_graph(doc: ModelDocument) -> Result<LayerGraph, GraphError> {
    document::build(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_helpers() {
        let s = Shape::new([32, 32, 16]);
        assert_eq!(s.spatial_area(), 1024);
        assert_eq!(s.channels(), 16);
        assert_eq!(s.halved(), Shape::new([16, 16, 16]));
        assert_eq!(Shape::new([5, 3, 8]).halved(), Shape::new([3, 2, 8]));
        assert_eq!(s.pooled_globally(), Shape::new([1, 1, 16]));
        assert_eq!(Shape::new([128]).spatial_area(), 1);
        assert_eq!(Shape::new([128]).halved(), Shape::new([128]));
        assert_eq!(s.to_string(), "32x32x16");
    }

    #[test]
    fn kind_classes() {
        assert!(LayerKind::Conv.is_compute());
        assert!(!LayerKind::Add.is_compute());
        assert!(LayerKind::Pool.is_post_processing());
        assert!(!LayerKind::Output.is_post_processing());
        assert_eq!(serde_json::to_string(&LayerKind::DepthwiseConv).unwrap(), "\"depthwise-conv\"");
    }
}
