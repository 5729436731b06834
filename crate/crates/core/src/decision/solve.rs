//! Threshold solvers.
//!
//! The scalar cost clamps the accuracy term at zero, so the cost of a
//! cascade is not a sum of per-exit terms and a plain scalar cost-to-go
//! can pick a suboptimal suffix. The solver therefore propagates, layer by
//! layer from the backbone towards the input, every non-dominated pair of
//! (expected efficiency per arriving sample, expected accuracy per
//! arriving sample). Under the independence model both quantities compose
//! exactly:
//!
//! ```text
//! eff(i) = s_i + (1 - p_i) * eff(i + 1)
//! acc(i) = p_i * a_i + (1 - p_i) * acc(i + 1)
//! ```
//!
//! and the cost is monotone in both, so the optimum survives pruning. The
//! configurations left at the input are scored with the same predictor as
//! the exhaustive oracle.

use std::cmp::Ordering;

use serde::Serialize;

use super::cascade::{predict_cascade, score, Cascade, CascadeMetrics, Weights};
use super::{DecisionError, SearchGraph, ThresholdConfig, ThresholdGrid};

/// Largest early-exit count the exhaustive oracle accepts.
pub const MAX_EXHAUSTIVE_EXITS: usize = 5;

/// Relative slack under which two labels are treated as tied.
const TIE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub config: ThresholdConfig,
    /// Grid index chosen at each exit.
    pub indices: Vec<usize>,
    pub metrics: CascadeMetrics,
    /// Configurations covered by the search.
    pub configurations: u128,
}

impl Solution {
    pub fn cost(&self) -> f64 {
        self.metrics.scalar_cost.expect("solutions are scored")
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    pass: f64,
    accuracy: f64,
}

/// Grid nodes per exit; a node nobody passes has no defined accuracy and
/// cannot be used.
fn usable_nodes(graph: &SearchGraph, cascade: &Cascade) -> Vec<Vec<Option<Node>>> {
    (0..graph.early_exits())
        .map(|i| {
            let profile = cascade.exit(i);
            graph
                .thresholds(i)
                .into_iter()
                .map(|t| profile.conditional_accuracy(t).map(|accuracy| Node { pass: profile.pass_rate(t), accuracy }))
                .collect()
        })
        .collect()
}

fn check_shape(graph: &SearchGraph, cascade: &Cascade) -> Result<(), DecisionError> {
    if graph.early_exits() != cascade.early_exits() {
        return Err(DecisionError::ConfigLength { expected: cascade.early_exits(), found: graph.early_exits() });
    }
    Ok(())
}

fn evaluate(
    cascade: &Cascade,
    graph: &SearchGraph,
    indices: &[usize],
    base: &CascadeMetrics,
    weights: &Weights,
) -> Result<(ThresholdConfig, CascadeMetrics), DecisionError> {
    let config = ThresholdConfig::new(indices.iter().enumerate().map(|(i, &j)| graph.thresholds(i)[j]).collect());
    let m = predict_cascade(cascade, &config)?;
    Ok((config, score(m, base, weights)))
}

#[derive(Debug, Clone)]
struct Label {
    eff: f64,
    acc: f64,
    suffix: Vec<usize>,
}

fn slack(v: f64) -> f64 {
    TIE_SLACK * v.abs().max(1.0)
}

/// Drop labels that another label beats on efficiency by more than the
/// slack while being at least as accurate, and exact duplicates of a
/// lexicographically smaller suffix. Near ties on efficiency are kept so
/// rounding never decides between configurations.
fn prune(mut labels: Vec<Label>, efficiency_matters: bool) -> Vec<Label> {
    labels.sort_by(|a, b| a.eff.total_cmp(&b.eff).then(b.acc.total_cmp(&a.acc)).then_with(|| a.suffix.cmp(&b.suffix)));
    let mut keep = Vec::with_capacity(labels.len());
    let mut best_acc = f64::NEG_INFINITY;
    let mut j = 0;
    for i in 0..labels.len() {
        let x = &labels[i];
        if i > 0 && labels[i - 1].eff == x.eff && labels[i - 1].acc == x.acc {
            continue;
        }
        if efficiency_matters {
            while j < i && labels[j].eff < x.eff - slack(x.eff) {
                best_acc = best_acc.max(labels[j].acc);
                j += 1;
            }
            if best_acc >= x.acc {
                continue;
            }
        }
        keep.push(i);
    }
    let mut out = Vec::with_capacity(keep.len());
    let mut it = keep.into_iter().peekable();
    for (i, l) in labels.into_iter().enumerate() {
        if it.peek() == Some(&i) {
            it.next();
            out.push(l);
        }
    }
    out
}

/// Minimum-cost configuration on the graph; ties go to the
/// lexicographically smallest index vector.
pub fn solve_thresholds(
    graph: &SearchGraph,
    cascade: &Cascade,
    base: &CascadeMetrics,
    weights: &Weights,
) -> Result<Solution, DecisionError> {
    check_shape(graph, cascade)?;
    let k = graph.early_exits();
    let nodes = usable_nodes(graph, cascade);
    let metric = weights.metric;
    let stages = cascade.stages();

    // Lexicographically smallest usable suffix from each layer on, used
    // wherever an exit passes everything and the suffix is irrelevant.
    let mut smallest_suffix: Vec<Option<Vec<usize>>> = vec![None; k + 1];
    smallest_suffix[k] = Some(Vec::new());
    for i in (0..k).rev() {
        smallest_suffix[i] = match (nodes[i].iter().position(Option::is_some), &smallest_suffix[i + 1]) {
            (Some(j), Some(rest)) => Some(std::iter::once(j).chain(rest.iter().copied()).collect()),
            _ => None,
        };
    }

    let mut labels = vec![Label {
        eff: metric.of_stage(&stages[k]),
        acc: cascade.final_profile().standalone_accuracy(),
        suffix: Vec::new(),
    }];
    for i in (0..k).rev() {
        let s = metric.of_stage(&stages[i]);
        let mut next = Vec::new();
        for (j, node) in nodes[i].iter().enumerate() {
            let Some(n) = node else { continue };
            if n.pass == 1.0 {
                if let Some(rest) = &smallest_suffix[i + 1] {
                    next.push(Label {
                        eff: s,
                        acc: n.accuracy,
                        suffix: std::iter::once(j).chain(rest.iter().copied()).collect(),
                    });
                }
                continue;
            }
            let stay = 1.0 - n.pass;
            next.extend(labels.iter().map(|l| Label {
                eff: s + stay * l.eff,
                acc: n.pass * n.accuracy + stay * l.acc,
                suffix: std::iter::once(j).chain(l.suffix.iter().copied()).collect(),
            }));
        }
        labels = prune(next, weights.efficiency > 0.0);
        if labels.is_empty() {
            return Err(DecisionError::NoViableConfiguration);
        }
    }

    labels.sort_by(|a, b| a.suffix.cmp(&b.suffix));
    let mut best: Option<(Vec<usize>, ThresholdConfig, CascadeMetrics)> = None;
    for l in labels {
        let (config, m) = evaluate(cascade, graph, &l.suffix, base, weights)?;
        if best.as_ref().is_none_or(|b| m.scalar_cost < b.2.scalar_cost) {
            best = Some((l.suffix, config, m));
        }
    }
    let (indices, config, metrics) = best.ok_or(DecisionError::NoViableConfiguration)?;
    Ok(Solution { config, indices, metrics, configurations: graph.configuration_count() })
}

/// Brute force over every configuration in lexicographic index order,
/// keeping the first strict minimum.
pub fn exhaustive_thresholds(
    graph: &SearchGraph,
    cascade: &Cascade,
    base: &CascadeMetrics,
    weights: &Weights,
) -> Result<Solution, DecisionError> {
    check_shape(graph, cascade)?;
    let k = graph.early_exits();
    if k > MAX_EXHAUSTIVE_EXITS {
        return Err(DecisionError::TooManyExits { exits: k, max: MAX_EXHAUSTIVE_EXITS });
    }
    let nodes = usable_nodes(graph, cascade);
    let radix: Vec<usize> = nodes.iter().map(Vec::len).collect();
    if radix.contains(&0) {
        return Err(DecisionError::NoViableConfiguration);
    }
    let mut idx = vec![0usize; k];
    let mut best: Option<Solution> = None;
    let mut visited: u128 = 0;
    loop {
        visited += 1;
        if idx.iter().enumerate().all(|(i, &j)| nodes[i][j].is_some()) {
            let (config, m) = evaluate(cascade, graph, &idx, base, weights)?;
            if best.as_ref().is_none_or(|b| m.scalar_cost < b.metrics.scalar_cost) {
                best = Some(Solution { config, indices: idx.clone(), metrics: m, configurations: 0 });
            }
        }
        // odometer, last exit fastest
        let mut pos = k;
        loop {
            if pos == 0 {
                let mut s = best.ok_or(DecisionError::NoViableConfiguration)?;
                s.configurations = visited;
                return Ok(s);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < radix[pos] {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Second pass on a finer grid spanning one coarse step around each chosen
/// threshold. Never returns a costlier configuration than `coarse`.
pub fn refine_thresholds(
    coarse: &Solution,
    grid: &ThresholdGrid,
    cascade: &Cascade,
    base: &CascadeMetrics,
    weights: &Weights,
    resolution: usize,
) -> Result<Solution, DecisionError> {
    if resolution <= 1 || coarse.config.early().is_empty() {
        return Ok(coarse.clone());
    }
    let layers: Vec<Vec<f64>> =
        coarse.config.early().iter().map(|&t| grid.refined_around(t, resolution).values().to_vec()).collect();
    let fine = solve_thresholds(&SearchGraph::with_layers(layers), cascade, base, weights)?;
    match fine.cost().partial_cmp(&coarse.cost()) {
        Some(Ordering::Greater) => Ok(coarse.clone()),
        _ => Ok(fine),
    }
}
