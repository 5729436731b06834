use std::fmt;

use serde::{Deserialize, Serialize};

use super::{GraphError, LayerGraph, LayerKind, LayerNode, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Width {
    Fixed(u64),
    /// Resolves to the backbone's class count.
    Classes,
}

impl Width {
    pub fn resolve(self, classes: u64) -> u64 {
        match self {
            Width::Fixed(w) => w,
            Width::Classes => classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BlueprintLayer {
    GlobalPool,
    Flatten,
    Dense { units: Width },
    PointwiseConv { filters: Width },
    Activation,
    Softmax,
}

impl fmt::Display for BlueprintLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = |w: &Width| match w {
            Width::Fixed(n) => n.to_string(),
            Width::Classes => "num_classes".to_string(),
        };
        match self {
            BlueprintLayer::GlobalPool => f.write_str("global-pool"),
            BlueprintLayer::Flatten => f.write_str("flatten"),
            BlueprintLayer::Dense { units } => write!(f, "dense({})", w(units)),
            BlueprintLayer::PointwiseConv { filters } => write!(f, "conv-1x1({})", w(filters)),
            BlueprintLayer::Activation => f.write_str("activation"),
            BlueprintLayer::Softmax => f.write_str("softmax"),
        }
    }
}

/// Layer pattern of the backbone's classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    pub layers: Vec<BlueprintLayer>,
    pub num_classes: u64,
    /// Feature map the head consumes in the backbone.
    pub input_shape: Shape,
}

impl Blueprint {
    /// Spatial area of the head's native input; exit branches downsample to it.
    pub fn target_area(&self) -> u64 {
        self.input_shape.spatial_area()
    }

    pub fn describe(&self) -> String {
        let parts: Vec<String> = self.layers.iter().map(ToString::to_string).collect();
        format!("[{}]", parts.join(", "))
    }
}

fn is_global_pool(node: &LayerNode, input: &Shape) -> bool {
    node.kind == LayerKind::Pool && node.output_shape.spatial_area() == 1 && input.spatial_area() > 1
}

fn is_pointwise_classifier(node: &LayerNode, input: &Shape) -> bool {
    node.kind == LayerKind::Conv && node.kernel.iter().all(|&k| k == 1) && input.spatial_area() == 1
}

/// Read the classifier head off the end of the backbone.
///
/// Walks back from the output over softmax/activation/reshape/dense layers,
/// 1x1 convolutions on pooled vectors and at most one global pool; the
/// head must contain a dense layer or a pointwise convolution.
pub fn extract_classifier_blueprint(g: &LayerGraph) -> Result<Blueprint, GraphError> {
    let mut head: Vec<(&LayerNode, BlueprintLayer)> = Vec::new();
    let mut node = g.output();
    let input_shape = loop {
        let [pred] = node.predecessors.as_slice() else {
            return Err(GraphError::NoClassifierHead);
        };
        let prev = g.node(pred).expect("validated predecessor");
        let Some(feeding) = prev.predecessors.first().and_then(|p| g.node(p)) else {
            break prev.output_shape.clone();
        };
        let in_shape = &feeding.output_shape;
        let layer = match prev.kind {
            LayerKind::Softmax => BlueprintLayer::Softmax,
            LayerKind::Activation => BlueprintLayer::Activation,
            LayerKind::Reshape => BlueprintLayer::Flatten,
            LayerKind::Dense => BlueprintLayer::Dense { units: Width::Fixed(prev.output_shape.channels()) },
            LayerKind::Conv if is_pointwise_classifier(prev, in_shape) => {
                BlueprintLayer::PointwiseConv { filters: Width::Fixed(prev.output_shape.channels()) }
            }
            LayerKind::Pool if is_global_pool(prev, in_shape) => {
                head.push((prev, BlueprintLayer::GlobalPool));
                break in_shape.clone();
            }
            _ => break prev.output_shape.clone(),
        };
        if prev.predecessors.len() != 1 {
            break prev.output_shape.clone();
        }
        head.push((prev, layer));
        node = prev;
    };
    head.reverse();

    // Activations directly after the feature extractor belong to it.
    let first_body = head
        .iter()
        .position(|(_, l)| !matches!(l, BlueprintLayer::Activation | BlueprintLayer::Softmax))
        .ok_or(GraphError::NoClassifierHead)?;
    let input_shape = if first_body > 0 { head[first_body - 1].0.output_shape.clone() } else { input_shape };
    let mut head = head.split_off(first_body);

    let last_classifier = head
        .iter()
        .rposition(|(_, l)| matches!(l, BlueprintLayer::Dense { .. } | BlueprintLayer::PointwiseConv { .. }))
        .ok_or(GraphError::NoClassifierHead)?;
    let num_classes = head[last_classifier].0.output_shape.channels();
    head[last_classifier].1 = match head[last_classifier].1 {
        BlueprintLayer::Dense { .. } => BlueprintLayer::Dense { units: Width::Classes },
        _ => BlueprintLayer::PointwiseConv { filters: Width::Classes },
    };

    Ok(Blueprint { layers: head.into_iter().map(|(_, l)| l).collect(), num_classes, input_shape })
}
