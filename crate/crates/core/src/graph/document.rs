use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{fuse, GraphError, LayerGraph, LayerKind, LayerNode, Shape};

/// Bytes per tensor element when the document does not say (float32).
pub const DEFAULT_ELEMENT_BYTES: u64 = 4;

/// On-disk model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_bytes: Option<u64>,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDocument {
    pub id: String,
    pub kind: LayerKind,
    pub shape: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macs: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_bytes: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_bytes: Option<i64>,
    #[serde(default)]
    pub inputs: Vec<String>,
}

impl ModelDocument {
    pub(super) fn from_graph(g: &LayerGraph) -> Self {
        let layers = g
            .nodes()
            .iter()
            .map(|n| LayerDocument {
                id: n.id.clone(),
                kind: n.kind,
                shape: n.output_shape.0.clone(),
                kernel: (n.kernel.iter().any(|&k| k != 1)).then(|| n.kernel.clone()),
                macs: Some(n.macs as i64),
                params_bytes: Some(n.params_bytes as i64),
                activation_bytes: Some(n.activation_bytes as i64),
                inputs: n.predecessors.clone(),
            })
            .collect();
        ModelDocument { name: g.name().to_string(), element_bytes: Some(g.element_bytes()), layers }
    }
}

fn non_negative(layer: &str, field: &'static str, v: Option<i64>) -> Result<Option<u64>, GraphError> {
    match v {
        Some(x) if x < 0 => Err(GraphError::NegativeCost { layer: layer.to_string(), field }),
        Some(x) => Ok(Some(x as u64)),
        None => Ok(None),
    }
}

struct Costs {
    macs: Option<u64>,
    params: Option<u64>,
    activation: Option<u64>,
}

pub(super) fn build(doc: ModelDocument) -> Result<LayerGraph, GraphError> {
    let element_bytes = doc.element_bytes.unwrap_or(DEFAULT_ELEMENT_BYTES);
    if element_bytes == 0 {
        return Err(GraphError::Malformed("element_bytes must be positive".into()));
    }
    let layers = doc.layers;
    let n = layers.len();

    let mut index = HashMap::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for (i, l) in layers.iter().enumerate() {
        if index.insert(l.id.clone(), i).is_some() {
            return Err(GraphError::DuplicateId(l.id.clone()));
        }
        costs.push(Costs {
            macs: non_negative(&l.id, "macs", l.macs)?,
            params: non_negative(&l.id, "params_bytes", l.params_bytes)?,
            activation: non_negative(&l.id, "activation_bytes", l.activation_bytes)?,
        });
        if l.shape.is_empty() || l.shape.contains(&0) {
            return Err(GraphError::InvalidLayer {
                layer: l.id.clone(),
                reason: "shape must be non-empty with positive dimensions".into(),
            });
        }
    }

    let mut preds: Vec<Vec<usize>> = Vec::with_capacity(n);
    for l in &layers {
        let mut p = Vec::with_capacity(l.inputs.len());
        for input in &l.inputs {
            match index.get(input) {
                Some(&j) => p.push(j),
                None => return Err(GraphError::DanglingPredecessor { layer: l.id.clone(), missing: input.clone() }),
            }
        }
        preds.push(p);
    }

    let inputs = layers.iter().filter(|l| l.kind == LayerKind::Input).count();
    if inputs != 1 {
        return Err(GraphError::InputCount(inputs));
    }
    let outputs = layers.iter().filter(|l| l.kind == LayerKind::Output).count();
    if outputs != 1 {
        return Err(GraphError::OutputCount(outputs));
    }
    let sources = preds.iter().filter(|p| p.is_empty()).count();
    if sources != 1 {
        return Err(GraphError::InputCount(sources));
    }
    let input = preds.iter().position(|p| p.is_empty()).unwrap();
    if layers[input].kind != LayerKind::Input {
        return Err(GraphError::InvalidLayer {
            layer: layers[input].id.clone(),
            reason: "only the input layer may have no inputs".into(),
        });
    }

    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, p) in preds.iter().enumerate() {
        for &j in p {
            succs[j].push(i);
        }
    }

    // Kahn's algorithm purely for cycle detection.
    let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut queue: VecDeque<usize> = VecDeque::from([input]);
    let mut seen = 0;
    while let Some(i) = queue.pop_front() {
        seen += 1;
        for &s in &succs[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                queue.push_back(s);
            }
        }
    }
    if seen != n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap();
        return Err(GraphError::Cycle(layers[stuck].id.clone()));
    }

    let sinks = succs.iter().filter(|s| s.is_empty()).count();
    if sinks != 1 {
        return Err(GraphError::OutputCount(sinks));
    }
    let output = succs.iter().position(|s| s.is_empty()).unwrap();
    if layers[output].kind != LayerKind::Output {
        return Err(GraphError::InvalidLayer {
            layer: layers[output].id.clone(),
            reason: "only the output layer may have no consumers".into(),
        });
    }

    let kinds: Vec<LayerKind> = layers.iter().map(|l| l.kind).collect();
    let ids: Vec<&str> = layers.iter().map(|l| l.id.as_str()).collect();
    let (order, doc_units) = fuse::decompose(&kinds, &ids, &preds, &succs, input)?;

    // Positions in the new topological order.
    let mut position = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        position[i] = pos;
    }

    let mut nodes = Vec::with_capacity(n);
    for &i in &order {
        let l = &layers[i];
        let shape = Shape::new(l.shape.clone());
        let in_shape = preds[i].first().map(|&j| Shape::new(layers[j].shape.clone()));
        let kernel = match &l.kernel {
            Some(k) => {
                if k.len() != shape.spatial_dims().len() || k.contains(&0) {
                    return Err(GraphError::InvalidLayer {
                        layer: l.id.clone(),
                        reason: format!(
                            "kernel {:?} does not match {} spatial dimensions",
                            k,
                            shape.spatial_dims().len()
                        ),
                    });
                }
                k.clone()
            }
            None => vec![1; shape.spatial_dims().len()],
        };
        let c = &costs[i];
        if !l.kind.is_compute() && c.macs.unwrap_or(0) != 0 {
            return Err(GraphError::InvalidLayer {
                layer: l.id.clone(),
                reason: format!("{} layers carry no MACs", l.kind),
            });
        }
        let (macs, params) = match (l.kind, &in_shape) {
            (k, Some(in_shape)) if k.is_compute() => {
                let (m, p) = compute_costs(k, &shape, in_shape, &kernel);
                (c.macs.unwrap_or(m), c.params.unwrap_or(p * element_bytes))
            }
            (LayerKind::Batchnorm, _) => (0, c.params.unwrap_or(4 * shape.channels() * element_bytes)),
            _ => (0, c.params.unwrap_or(0)),
        };
        nodes.push(LayerNode {
            id: l.id.clone(),
            kind: l.kind,
            activation_bytes: c.activation.unwrap_or(shape.elements() * element_bytes),
            output_shape: shape,
            kernel,
            macs,
            params_bytes: params,
            predecessors: l.inputs.clone(),
        });
    }

    let index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    let successors = order.iter().map(|&i| succs[i].iter().map(|&s| position[s]).collect()).collect();
    let units = doc_units.into_iter().map(|u| u.remap(&position)).collect();

    Ok(LayerGraph { name: doc.name, element_bytes, nodes, index, successors, units })
}

/// MACs and parameter element count of a compute layer.
///
/// conv: out_area·out_c·Πk·in_c; depthwise omits in_c; dense: in·out.
pub(crate) fn compute_costs(kind: LayerKind, out: &Shape, input: &Shape, kernel: &[u64]) -> (u64, u64) {
    let k: u64 = kernel.iter().product();
    let out_c = out.channels();
    match kind {
        LayerKind::Conv => {
            let in_c = input.channels();
            (out.spatial_area() * out_c * k * in_c, k * in_c * out_c + out_c)
        }
        LayerKind::DepthwiseConv => (out.spatial_area() * out_c * k, k * out_c + out_c),
        LayerKind::Dense => {
            let (in_features, positions) =
                if out.rank() == 1 { (input.elements(), 1) } else { (input.channels(), out.spatial_area()) };
            (positions * in_features * out_c, in_features * out_c + out_c)
        }
        _ => (0, 0),
    }
}
