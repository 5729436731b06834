use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{GraphError, LayerGraph, LayerKind, Shape};

/// A step along the main chain: one layer, or a whole residual region
/// (both arms in order, then the joining add).
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Unit {
    Single(usize),
    Residual(Vec<usize>),
}

impl Unit {
    pub(super) fn remap(self, position: &[usize]) -> Unit {
        match self {
            Unit::Single(i) => Unit::Single(position[i]),
            Unit::Residual(m) => Unit::Residual(m.into_iter().map(|i| position[i]).collect()),
        }
    }
}

fn unsupported(ids: &[&str], at: usize, reason: impl Into<String>) -> GraphError {
    GraphError::UnsupportedTopology { layer: ids[at].to_string(), reason: reason.into() }
}

/// Walk the validated DAG from the input and split it into chain units.
/// Returns the resulting topological order alongside the units.
pub(super) fn decompose(
    kinds: &[LayerKind],
    ids: &[&str],
    preds: &[Vec<usize>],
    succs: &[Vec<usize>],
    input: usize,
) -> Result<(Vec<usize>, Vec<Unit>), GraphError> {
    for (i, p) in preds.iter().enumerate() {
        match (kinds[i], p.len()) {
            (LayerKind::Add, 2) => {}
            (LayerKind::Add, n) => {
                return Err(unsupported(ids, i, format!("add layer needs exactly 2 inputs, has {n}")))
            }
            (_, n) if n > 1 => return Err(unsupported(ids, i, "only add layers may join branches")),
            _ => {}
        }
    }

    let mut order = vec![input];
    let mut units = vec![Unit::Single(input)];
    let mut cur = input;
    loop {
        match succs[cur].as_slice() {
            [] => break,
            &[next] => {
                if preds[next].len() != 1 {
                    return Err(unsupported(ids, next, "join without a matching residual fork"));
                }
                order.push(next);
                units.push(Unit::Single(next));
                cur = next;
            }
            &[a, b] => {
                let mut members = Vec::new();
                let mut joins = [0usize; 2];
                for (slot, start) in [a, b].into_iter().enumerate() {
                    let mut node = start;
                    while preds[node].len() == 1 {
                        if succs[node].len() != 1 {
                            return Err(unsupported(ids, node, "branching inside a residual arm"));
                        }
                        members.push(node);
                        node = succs[node][0];
                    }
                    joins[slot] = node;
                }
                if joins[0] != joins[1] {
                    return Err(unsupported(ids, cur, "residual arms do not rejoin at one add"));
                }
                if a == b {
                    return Err(unsupported(ids, cur, "residual region without any arm layer"));
                }
                members.push(joins[0]);
                order.extend_from_slice(&members);
                units.push(Unit::Residual(members));
                cur = joins[0];
            }
            _ => return Err(unsupported(ids, cur, "forks wider than two arms are not supported")),
        }
    }
    if order.len() != kinds.len() {
        let missing = (0..kinds.len()).find(|i| !order.contains(i)).unwrap();
        return Err(unsupported(ids, missing, "layer is not on the main chain"));
    }
    Ok((order, units))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    Plain,
    Residual,
    FusedCompute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: String,
    pub member_layers: Vec<String>,
    pub kind: BlockKind,
    pub macs: u64,
    pub ofm_shape: Shape,
    /// Size of the block's output tensor, i.e. what crosses a split here.
    pub ofm_bytes: u64,
    pub params_bytes: u64,
    /// Largest single activation among the members.
    pub activation_bytes: u64,
    #[serde(skip)]
    span: Range<usize>,
}

impl Block {
    /// Range of member positions in the layer graph's topological order.
    pub fn span(&self) -> Range<usize> {
        self.span.clone()
    }
}

/// Coarse-grained chain of fused blocks.
#[derive(Debug, Clone)]
pub struct BlockGraph {
    blocks: Vec<Block>,
    layer_block: HashMap<String, usize>,
}

impl BlockGraph {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Interior block boundaries, i.e. candidate exit locations.
    pub fn boundary_count(&self) -> usize {
        self.blocks.len().saturating_sub(1)
    }

    pub fn block_of(&self, layer_id: &str) -> Option<usize> {
        self.layer_block.get(layer_id).copied()
    }

    pub fn total_macs(&self) -> u64 {
        self.blocks.iter().map(|b| b.macs).sum()
    }

    /// MACs of blocks `0..=idx`.
    pub fn cumulative_macs(&self, idx: usize) -> u64 {
        self.blocks[..=idx].iter().map(|b| b.macs).sum()
    }
}

struct Pending {
    members: Vec<usize>,
    anchor: Option<usize>,
    kind: BlockKind,
}

/// Coarsen a layer graph into blocks.
///
/// Residual regions collapse into one block; post-processing layers
/// (activation, batchnorm, pool, reshape, softmax) directly after a block
/// fuse into it. Layers preceding the first compute layer join the first
/// block, and the output layer joins the last one.
pub fn fuse_blocks(g: &LayerGraph) -> BlockGraph {
    let nodes = g.nodes();
    let mut open: Vec<Pending> = Vec::new();
    let mut leading: Vec<usize> = Vec::new();

    for unit in g.units() {
        match unit {
            Unit::Residual(members) => {
                let mut m = std::mem::take(&mut leading);
                m.extend_from_slice(members);
                open.push(Pending { anchor: members.last().copied(), members: m, kind: BlockKind::Residual });
            }
            Unit::Single(i) => {
                let kind = nodes[*i].kind;
                if kind.is_compute() {
                    let mut m = std::mem::take(&mut leading);
                    m.push(*i);
                    open.push(Pending { members: m, anchor: Some(*i), kind: BlockKind::Plain });
                } else if kind.is_post_processing() || kind == LayerKind::Output {
                    match open.last_mut() {
                        Some(b) => {
                            b.members.push(*i);
                            if b.kind == BlockKind::Plain && kind.is_post_processing() {
                                b.kind = BlockKind::FusedCompute;
                            }
                        }
                        None => leading.push(*i),
                    }
                } else {
                    leading.push(*i);
                }
            }
        }
    }
    if !leading.is_empty() {
        // no compute layer at all
        open.push(Pending { members: leading, anchor: None, kind: BlockKind::Plain });
    }

    let mut blocks = Vec::with_capacity(open.len());
    let mut layer_block = HashMap::with_capacity(nodes.len());
    for (bi, p) in open.into_iter().enumerate() {
        let members: Vec<_> = p.members.iter().map(|&i| &nodes[i]).collect();
        let last = members.last().expect("blocks are never empty");
        let id = nodes[p.anchor.unwrap_or(p.members[0])].id.clone();
        for m in &members {
            layer_block.insert(m.id.clone(), bi);
        }
        let first = p.members[0];
        debug_assert!(p.members.windows(2).all(|w| w[1] == w[0] + 1));
        blocks.push(Block {
            id,
            member_layers: members.iter().map(|m| m.id.clone()).collect(),
            kind: p.kind,
            macs: members.iter().map(|m| m.macs).sum(),
            ofm_shape: last.output_shape.clone(),
            ofm_bytes: last.activation_bytes,
            params_bytes: members.iter().map(|m| m.params_bytes).sum(),
            activation_bytes: members.iter().map(|m| m.activation_bytes).max().unwrap_or(0),
            span: first..first + p.members.len(),
        });
    }
    BlockGraph { blocks, layer_block }
}
