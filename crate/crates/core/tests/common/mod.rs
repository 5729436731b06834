#![allow(dead_code)]

use std::path::PathBuf;

use eenn_core::graph::{LayerDocument, LayerKind, ModelDocument};
use eenn_core::hardware::{Link, Platform, ProcessorSpec};
use eenn_core::profiles::{profile_exit, CalibrationSource, ExitProfile, Outcome};
use proptest::prelude::*;

pub fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[derive(Debug, Clone)]
pub enum Piece {
    Conv { channels: u64, stride: bool, post: bool },
    Depthwise { post: bool },
    Residual { arm: usize, projection: Option<u64> },
}

fn piece() -> impl Strategy<Value = Piece> {
    prop_oneof![
        (1u64..=16, any::<bool>(), any::<bool>()).prop_map(|(c, stride, post)| Piece::Conv {
            channels: c * 4,
            stride,
            post
        }),
        any::<bool>().prop_map(|post| Piece::Depthwise { post }),
        (1usize..=3, prop::option::of(1u64..=16))
            .prop_map(|(arm, p)| Piece::Residual { arm, projection: p.map(|c| c * 4) }),
    ]
}

/// Random conv nets: a compute stem, 0..10 pieces and a pooled dense head.
pub fn model() -> impl Strategy<Value = ModelDocument> {
    (prop::sample::select(vec![4u64, 8, 16, 32]), 1u64..=4, prop::collection::vec(piece(), 0..10), 2u64..=20)
        .prop_map(|(size, c_in, pieces, classes)| build_model(size, c_in, &pieces, classes))
}

struct Builder {
    layers: Vec<LayerDocument>,
    shape: Vec<u64>,
    prev: String,
}

impl Builder {
    fn push(&mut self, id: String, kind: LayerKind, shape: Vec<u64>, inputs: Vec<String>, kernel: Option<Vec<u64>>) {
        self.layers.push(LayerDocument {
            id: id.clone(),
            kind,
            shape: shape.clone(),
            kernel,
            macs: None,
            params_bytes: None,
            activation_bytes: None,
            inputs,
        });
        self.shape = shape;
        self.prev = id;
    }
}

pub fn build_model(size: u64, c_in: u64, pieces: &[Piece], classes: u64) -> ModelDocument {
    let mut b = Builder { layers: Vec::new(), shape: vec![size, size, c_in], prev: String::new() };
    b.push("in".into(), LayerKind::Input, vec![size, size, c_in], vec![], None);
    b.push("stem".into(), LayerKind::Conv, vec![size, size, 8], vec!["in".into()], Some(vec![3, 3]));
    for (i, p) in pieces.iter().enumerate() {
        let (h, w, c) = (b.shape[0], b.shape[1], b.shape[2]);
        match *p {
            Piece::Conv { channels, stride, post } => {
                let (h, w) = if stride && h > 1 { (h.div_ceil(2), w.div_ceil(2)) } else { (h, w) };
                let prev = b.prev.clone();
                b.push(format!("c{i}"), LayerKind::Conv, vec![h, w, channels], vec![prev], Some(vec![3, 3]));
                if post {
                    let prev = b.prev.clone();
                    b.push(format!("c{i}_relu"), LayerKind::Activation, vec![h, w, channels], vec![prev], None);
                }
            }
            Piece::Depthwise { post } => {
                let prev = b.prev.clone();
                b.push(format!("d{i}"), LayerKind::DepthwiseConv, vec![h, w, c], vec![prev], Some(vec![3, 3]));
                if post {
                    let prev = b.prev.clone();
                    b.push(format!("d{i}_bn"), LayerKind::Batchnorm, vec![h, w, c], vec![prev], None);
                }
            }
            Piece::Residual { arm, projection } => {
                let fork = b.prev.clone();
                let out_c = projection.unwrap_or(c);
                let mut last = fork.clone();
                for a in 0..arm {
                    let ch = if a + 1 == arm { out_c } else { c };
                    b.push(format!("r{i}a{a}"), LayerKind::Conv, vec![h, w, ch], vec![last.clone()], Some(vec![3, 3]));
                    last = b.prev.clone();
                }
                let skip = match projection {
                    Some(pc) => {
                        b.push(format!("r{i}p"), LayerKind::Conv, vec![h, w, pc], vec![fork.clone()], None);
                        b.prev.clone()
                    }
                    None => fork,
                };
                b.push(format!("r{i}add"), LayerKind::Add, vec![h, w, out_c], vec![last, skip], None);
                let prev = b.prev.clone();
                b.push(format!("r{i}relu"), LayerKind::Activation, vec![h, w, out_c], vec![prev], None);
            }
        }
    }
    let c = b.shape[2];
    let prev = b.prev.clone();
    b.push("pool".into(), LayerKind::Pool, vec![c], vec![prev], None);
    b.push("fc".into(), LayerKind::Dense, vec![classes], vec!["pool".into()], None);
    b.push("softmax".into(), LayerKind::Softmax, vec![classes], vec!["fc".into()], None);
    b.push("out".into(), LayerKind::Output, vec![classes], vec!["softmax".into()], None);
    ModelDocument { name: "random".into(), element_bytes: None, layers: b.layers }
}

pub fn processor(id: &str, macs_per_second: f64, active: f64, sleep: f64) -> ProcessorSpec {
    ProcessorSpec {
        id: id.into(),
        macs_per_second,
        mem_bytes: u64::MAX / 4,
        storage_bytes: u64::MAX / 4,
        active_power_mw: active,
        sleep_power_mw: sleep,
    }
}

pub fn chain(procs: Vec<ProcessorSpec>, link_bps: f64, budget: f64) -> Platform {
    let links = procs
        .windows(2)
        .map(|w| Link { from: w[0].id.clone(), to: w[1].id.clone(), bytes_per_second: link_bps })
        .collect();
    Platform::new(procs, links, budget).unwrap()
}

/// Outcomes with confidences on a 0.01 lattice, so grid thresholds tie.
pub fn outcomes(max: usize) -> impl Strategy<Value = Vec<Outcome>> {
    prop::collection::vec(
        (0u32..=100, any::<bool>()).prop_map(|(c, correct)| Outcome { confidence: c as f64 / 100.0, correct }),
        1..max,
    )
}

pub fn profile(id: &str, o: &[Outcome]) -> ExitProfile {
    profile_exit(id, o, CalibrationSource::Validation).unwrap()
}

/// Joint outcomes for `k` early exits plus the final classifier, one row
/// per sample, and a non-negative cost per stage.
#[derive(Debug, Clone)]
pub struct JointCase {
    pub columns: Vec<Vec<Outcome>>,
    pub stages: Vec<eenn_core::decision::StageCost>,
}

impl JointCase {
    pub fn k(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn ids(&self) -> Vec<String> {
        (0..self.k()).map(|i| format!("e{i}")).collect()
    }

    pub fn profiles(&self) -> Vec<ExitProfile> {
        let mut ids = self.ids();
        ids.push(eenn_core::profiles::FINAL_LOCATION.into());
        ids.iter().zip(&self.columns).map(|(id, c)| profile(id, c)).collect()
    }

    pub fn records(&self) -> eenn_core::profiles::RecordSet {
        let mut ids = self.ids();
        ids.push(eenn_core::profiles::FINAL_LOCATION.into());
        let recs = ids
            .iter()
            .zip(&self.columns)
            .flat_map(|(id, col)| {
                col.iter().enumerate().map(move |(s, o)| eenn_core::profiles::CalibrationRecord {
                    sample_id: s as u64,
                    location_id: id.clone(),
                    confidence: o.confidence,
                    correct: o.correct,
                })
            })
            .collect();
        eenn_core::profiles::RecordSet::from_records(recs).unwrap()
    }
}

pub fn cascade<'a>(
    profiles: &'a [ExitProfile],
    stages: &[eenn_core::decision::StageCost],
) -> eenn_core::decision::Cascade<'a> {
    let (last, exits) = profiles.split_last().unwrap();
    eenn_core::decision::Cascade::new(exits.iter().collect(), last, stages.to_vec())
}

pub fn stage(macs: f64, latency_s: f64, energy_mj: f64) -> eenn_core::decision::StageCost {
    eenn_core::decision::StageCost { macs, latency_s, energy_mj }
}

pub fn joint_case(max_k: usize, max_n: usize) -> impl Strategy<Value = JointCase> {
    (0..=max_k, 1..max_n).prop_flat_map(|(k, n)| {
        let col = prop::collection::vec(
            (0u32..=100, any::<bool>()).prop_map(|(c, correct)| Outcome { confidence: c as f64 / 100.0, correct }),
            n,
        );
        let stage = (0u32..1000, 0u32..1000, 0u32..1000)
            .prop_map(|(m, l, e)| self::stage(m as f64, l as f64 / 1e3, e as f64 / 10.0));
        (prop::collection::vec(col, k + 1), prop::collection::vec(stage, k + 1))
            .prop_map(|(columns, stages)| JointCase { columns, stages })
    })
}
