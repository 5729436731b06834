use serde::Serialize;

use super::ThresholdGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum SearchNode {
    Input,
    Exit {
        exit: usize,
        index: usize,
        threshold: f64,
    },
    /// The backbone classifier; every remaining sample terminates here.
    Final,
}

/// Layered threshold graph: input, one layer per early exit, final node.
/// Consecutive layers are completely connected, so every input-to-final
/// path is one threshold configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGraph {
    layers: Vec<Vec<SearchNode>>,
}

impl SearchGraph {
    /// Same grid on every exit.
    pub fn build(early_exits: usize, grid: &ThresholdGrid) -> Self {
        SearchGraph::with_layers(vec![grid.values().to_vec(); early_exits])
    }

    /// One threshold list per exit.
    pub fn with_layers(thresholds: Vec<Vec<f64>>) -> Self {
        let mut layers = vec![vec![SearchNode::Input]];
        for (exit, ts) in thresholds.into_iter().enumerate() {
            layers.push(
                ts.into_iter()
                    .enumerate()
                    .map(|(index, threshold)| SearchNode::Exit { exit, index, threshold })
                    .collect(),
            );
        }
        layers.push(vec![SearchNode::Final]);
        SearchGraph { layers }
    }

    pub fn layers(&self) -> &[Vec<SearchNode>] {
        &self.layers
    }

    pub fn early_exits(&self) -> usize {
        self.layers.len() - 2
    }

    /// Thresholds of exit `i`'s layer.
    pub fn thresholds(&self, exit: usize) -> Vec<f64> {
        self.layers[exit + 1]
            .iter()
            .map(|n| match n {
                SearchNode::Exit { threshold, .. } => *threshold,
                _ => unreachable!("exit layers hold exit nodes"),
            })
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.layers.windows(2).map(|w| w[0].len() * w[1].len()).sum()
    }

    /// Number of input-to-final paths.
    pub fn configuration_count(&self) -> u128 {
        self.layers.iter().map(|l| l.len() as u128).product()
    }
}

/// Layered search graph for `early_exits` exits on a shared grid.
pub fn build_search_graph(early_exits: usize, grid: &ThresholdGrid) -> SearchGraph {
    SearchGraph::build(early_exits, grid)
}
