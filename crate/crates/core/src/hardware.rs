//! Processor chain description and first-order cost estimators.
//!
//! Latency is MACs over throughput, transfers are bytes over link speed, and
//! energy charges the single active processor at its active power while
//! every other processor idles at its sleep power.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::search_space::Mapping;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HardwareError {
    #[error("malformed hardware document: {0}")]
    Malformed(String),
    #[error("platform has no processors")]
    NoProcessors,
    #[error("duplicate processor id {0:?}")]
    DuplicateProcessor(String),
    #[error("processor {0:?} must have positive throughput")]
    NonPositiveThroughput(String),
    #[error("processor {0:?} must have positive memory and storage")]
    NoMemory(String),
    #[error("processor {id:?}: power must satisfy 0 <= sleep ({sleep}) <= active ({active})")]
    InvalidPower { id: String, active: f64, sleep: f64 },
    #[error("expected {expected} links for {processors} processors, found {found}")]
    LinkCount { processors: usize, expected: usize, found: usize },
    #[error("link {index} must connect {expected_from:?} -> {expected_to:?}")]
    LinkOrder { index: usize, expected_from: String, expected_to: String },
    #[error("link {0} must have positive bandwidth")]
    NonPositiveBandwidth(usize),
    #[error("latency budget must be positive, got {0}")]
    NonPositiveBudget(f64),
    #[error("mapping references unknown processor index {0}")]
    UnknownProcessor(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorSpec {
    pub id: String,
    pub macs_per_second: f64,
    pub mem_bytes: u64,
    pub storage_bytes: u64,
    pub active_power_mw: f64,
    pub sleep_power_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from: String,
    pub to: String,
    pub bytes_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlatformDocument {
    processors: Vec<ProcessorSpec>,
    #[serde(default)]
    links: Vec<Link>,
    latency_budget_s: f64,
}

/// Ordered processor chain; processor `i` hands over to `i + 1` via link `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Platform {
    processors: Vec<ProcessorSpec>,
    links: Vec<Link>,
    latency_budget_s: f64,
}

/// False for NaN as well as for non-positive values.
fn positive(x: f64) -> bool {
    x > 0.0
}

impl Platform {
    pub fn new(processors: Vec<ProcessorSpec>, links: Vec<Link>, latency_budget_s: f64) -> Result<Self, HardwareError> {
        if processors.is_empty() {
            return Err(HardwareError::NoProcessors);
        }
        let mut ids = HashSet::new();
        for p in &processors {
            if !ids.insert(p.id.as_str()) {
                return Err(HardwareError::DuplicateProcessor(p.id.clone()));
            }
            if !positive(p.macs_per_second) {
                return Err(HardwareError::NonPositiveThroughput(p.id.clone()));
            }
            if p.mem_bytes == 0 || p.storage_bytes == 0 {
                return Err(HardwareError::NoMemory(p.id.clone()));
            }
            if !(p.sleep_power_mw >= 0.0 && p.sleep_power_mw <= p.active_power_mw) {
                return Err(HardwareError::InvalidPower {
                    id: p.id.clone(),
                    active: p.active_power_mw,
                    sleep: p.sleep_power_mw,
                });
            }
        }
        if links.len() + 1 != processors.len() {
            return Err(HardwareError::LinkCount {
                processors: processors.len(),
                expected: processors.len() - 1,
                found: links.len(),
            });
        }
        for (i, l) in links.iter().enumerate() {
            if l.from != processors[i].id || l.to != processors[i + 1].id {
                return Err(HardwareError::LinkOrder {
                    index: i,
                    expected_from: processors[i].id.clone(),
                    expected_to: processors[i + 1].id.clone(),
                });
            }
            if !positive(l.bytes_per_second) {
                return Err(HardwareError::NonPositiveBandwidth(i));
            }
        }
        if !positive(latency_budget_s) {
            return Err(HardwareError::NonPositiveBudget(latency_budget_s));
        }
        Ok(Platform { processors, links, latency_budget_s })
    }

    pub fn from_json(text: &str) -> Result<Self, HardwareError> {
        let doc: PlatformDocument = serde_json::from_str(text).map_err(|e| HardwareError::Malformed(e.to_string()))?;
        Platform::new(doc.processors, doc.links, doc.latency_budget_s)
    }

    pub fn processors(&self) -> &[ProcessorSpec] {
        &self.processors
    }

    pub fn processor(&self, idx: usize) -> Option<&ProcessorSpec> {
        self.processors.get(idx)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.processors.iter().position(|p| p.id == id)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.processors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.processors.is_empty()
    }

    pub fn latency_budget_s(&self) -> f64 {
        self.latency_budget_s
    }

    pub fn with_budget(&self, latency_budget_s: f64) -> Result<Self, HardwareError> {
        Platform::new(self.processors.clone(), self.links.clone(), latency_budget_s)
    }

    /// Sum of sleep power over every processor except `active`.
    fn idle_power_mw(&self, active: usize) -> f64 {
        self.processors.iter().enumerate().filter(|&(i, _)| i != active).map(|(_, p)| p.sleep_power_mw).sum()
    }
}

pub fn segment_latency(macs: u64, p: &ProcessorSpec) -> f64 {
    macs as f64 / p.macs_per_second
}

pub fn transfer_latency(bytes: u64, link: &Link) -> f64 {
    bytes as f64 / link.bytes_per_second
}

/// Work assigned to one processor for one subgraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentLoad {
    pub processor: usize,
    /// Backbone MACs of the span plus the exit branch that ends it.
    pub macs: u64,
    /// Activation tensor received from the previous segment.
    pub inbound_bytes: u64,
    pub params_bytes: u64,
    pub peak_activation_bytes: u64,
}

/// Time from the previous segment's hand-off to this segment's result,
/// including the inbound transfer.
pub fn stage_latency(load: &SegmentLoad, plat: &Platform) -> Result<f64, HardwareError> {
    let p = plat.processor(load.processor).ok_or(HardwareError::UnknownProcessor(load.processor))?;
    let mut t = segment_latency(load.macs, p);
    if load.processor > 0 && load.inbound_bytes > 0 {
        t += transfer_latency(load.inbound_bytes, &plat.links[load.processor - 1]);
    }
    Ok(t)
}

/// Full-depth latency: every segment runs and every split is crossed.
pub fn worst_case_latency(loads: &[SegmentLoad], plat: &Platform) -> Result<f64, HardwareError> {
    loads.iter().map(|l| stage_latency(l, plat)).sum()
}

/// Energy of one segment: active power on its processor, sleep power on all others.
pub fn segment_energy_mj(latency_s: f64, active: usize, plat: &Platform) -> f64 {
    let p = &plat.processors[active];
    latency_s * p.active_power_mw + latency_s * plat.idle_power_mw(active)
}

/// Energy of running the first `executed_segments` segments of a mapping.
pub fn energy_estimate(
    mapping: &Mapping,
    latencies: &[f64],
    plat: &Platform,
    executed_segments: usize,
) -> Result<f64, HardwareError> {
    let mut total = 0.0;
    for (seg, &t) in mapping.segments.iter().zip(latencies).take(executed_segments) {
        if seg.processor >= plat.len() {
            return Err(HardwareError::UnknownProcessor(seg.processor));
        }
        total += segment_energy_mj(t, seg.processor, plat);
    }
    Ok(total)
}

/// Whether a subgraph's weights fit in storage and weights plus peak
/// activations fit in working memory.
pub fn memory_fit(params_bytes: u64, peak_activation_bytes: u64, p: &ProcessorSpec) -> bool {
    params_bytes <= p.storage_bytes && params_bytes.saturating_add(peak_activation_bytes) <= p.mem_bytes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::Segment;

    fn proc(id: &str, mps: f64, active: f64, sleep: f64) -> ProcessorSpec {
        ProcessorSpec {
            id: id.into(),
            macs_per_second: mps,
            mem_bytes: 1 << 20,
            storage_bytes: 2 << 20,
            active_power_mw: active,
            sleep_power_mw: sleep,
        }
    }

    fn link(from: &str, to: &str, bps: f64) -> Link {
        Link { from: from.into(), to: to.into(), bytes_per_second: bps }
    }

    fn two_core(link_bps: f64) -> Platform {
        Platform::new(
            vec![proc("m0", 10e6, 10.0, 1.0), proc("m4", 75e6, 5.0, 1.0)],
            vec![link("m0", "m4", link_bps)],
            2.5,
        )
        .unwrap()
    }

    fn mapping(procs: &[usize]) -> Mapping {
        Mapping {
            segments: procs
                .iter()
                .enumerate()
                .map(|(i, &p)| Segment { blocks: i..i + 1, processor: p, exit: None })
                .collect(),
        }
    }

    #[test]
    fn segment_latency_examples() {
        let m0 = proc("m0", 10e6, 0.0, 0.0);
        assert!((segment_latency(9_679_900, &m0) - 0.96799).abs() < 1e-12);
        assert_eq!(segment_latency(0, &m0), 0.0);
        assert_eq!(segment_latency(75_000_000, &proc("m4", 75e6, 0.0, 0.0)), 1.0);
    }

    #[test]
    fn transfer_latency_examples() {
        // 50 Mbps uplink
        assert_eq!(transfer_latency(6_250_000, &link("a", "b", 6.25e6)), 1.0);
        assert_eq!(transfer_latency(0, &link("a", "b", 6.25e6)), 0.0);
        assert_eq!(transfer_latency(1024, &link("a", "b", 1024.0 * 1024.0)), 1.0 / 1024.0);
    }

    #[test]
    fn worst_case_sums_segments_and_transfers() {
        let single = Platform::new(vec![proc("p", 10e6, 1.0, 0.0)], vec![], 10.0).unwrap();
        let load =
            SegmentLoad { processor: 0, macs: 11_000_000, inbound_bytes: 0, params_bytes: 0, peak_activation_bytes: 0 };
        assert!((worst_case_latency(&[load], &single).unwrap() - 1.1).abs() < 1e-12);

        // two 1 s segments with a 0.5 s transfer in between
        let plat =
            Platform::new(vec![proc("a", 1e6, 1.0, 0.0), proc("b", 1e6, 1.0, 0.0)], vec![link("a", "b", 1000.0)], 10.0)
                .unwrap();
        let loads = [
            SegmentLoad { processor: 0, macs: 1_000_000, inbound_bytes: 0, params_bytes: 0, peak_activation_bytes: 0 },
            SegmentLoad {
                processor: 1,
                macs: 1_000_000,
                inbound_bytes: 500,
                params_bytes: 0,
                peak_activation_bytes: 0,
            },
        ];
        assert!((worst_case_latency(&loads, &plat).unwrap() - 2.5).abs() < 1e-12);

        let bad = [SegmentLoad { processor: 7, ..loads[0].clone() }];
        assert_eq!(worst_case_latency(&bad, &plat), Err(HardwareError::UnknownProcessor(7)));
    }

    #[test]
    fn energy_examples() {
        let plat =
            Platform::new(vec![proc("a", 1e6, 18.53, 0.0), proc("b", 1e6, 5.0, 0.0)], vec![link("a", "b", 1.0)], 1.0)
                .unwrap();
        let e = energy_estimate(&mapping(&[0]), &[1.0], &plat, 1).unwrap();
        assert!((e - 18.53).abs() < 1e-12);
        assert_eq!(energy_estimate(&mapping(&[0, 1]), &[0.0, 0.0], &plat, 2).unwrap(), 0.0);

        // 1 s @ 10 mW then 2 s @ 5 mW, the idle core sleeping at 1 mW:
        // 10 + 1 (b asleep) + 10 + 2 (a asleep) = 23 mJ
        let plat = two_core(1.0);
        let e = energy_estimate(&mapping(&[0, 1]), &[1.0, 2.0], &plat, 2).unwrap();
        assert!((e - 23.0).abs() < 1e-12);
        // only the first segment executed
        let e = energy_estimate(&mapping(&[0, 1]), &[1.0, 2.0], &plat, 1).unwrap();
        assert!((e - 11.0).abs() < 1e-12);
    }

    #[test]
    fn memory_fit_examples() {
        let p = ProcessorSpec {
            id: "p".into(),
            macs_per_second: 1.0,
            mem_bytes: 1 << 20,
            storage_bytes: 2 << 20,
            active_power_mw: 1.0,
            sleep_power_mw: 0.0,
        };
        assert!(memory_fit(100 << 10, 50 << 10, &p));
        assert!(!memory_fit((2 << 20) + 1, 0, &p));
        assert!(memory_fit(1 << 19, 1 << 19, &p));
        assert!(!memory_fit(1 << 19, (1 << 19) + 1, &p));
    }

    #[test]
    fn platform_validation() {
        let err = Platform::new(vec![proc("a", 0.0, 1.0, 0.0)], vec![], 1.0).unwrap_err();
        assert_eq!(err, HardwareError::NonPositiveThroughput("a".into()));
        let err = Platform::new(vec![proc("a", 1.0, 1.0, 2.0)], vec![], 1.0).unwrap_err();
        assert!(matches!(err, HardwareError::InvalidPower { .. }));
        let err = Platform::new(vec![proc("a", 1.0, 1.0, 0.0), proc("b", 1.0, 1.0, 0.0)], vec![], 1.0).unwrap_err();
        assert!(matches!(err, HardwareError::LinkCount { expected: 1, found: 0, .. }));
        let err =
            Platform::new(vec![proc("a", 1.0, 1.0, 0.0), proc("b", 1.0, 1.0, 0.0)], vec![link("b", "a", 1.0)], 1.0)
                .unwrap_err();
        assert!(matches!(err, HardwareError::LinkOrder { index: 0, .. }));
        assert_eq!(
            Platform::new(vec![proc("a", 1.0, 1.0, 0.0)], vec![], 0.0).unwrap_err(),
            HardwareError::NonPositiveBudget(0.0)
        );
    }

    #[test]
    fn parses_document() {
        let plat = Platform::from_json(
            r#"{"processors":[
                {"id":"m0","macs_per_second":1e7,"mem_bytes":1048576,"storage_bytes":2097152,"active_power_mw":19.0,"sleep_power_mw":0.5},
                {"id":"m4","macs_per_second":7.5e7,"mem_bytes":1048576,"storage_bytes":2097152,"active_power_mw":32.0,"sleep_power_mw":0.5}],
              "links":[{"from":"m0","to":"m4","bytes_per_second":2e6}],
              "latency_budget_s":2.5}"#,
        )
        .unwrap();
        assert_eq!(plat.len(), 2);
        assert_eq!(plat.position("m4"), Some(1));
        assert!(matches!(
            Platform::from_json(r#"{"processors":[],"latency_budget_s":1,"extra":1}"#),
            Err(HardwareError::Malformed(_))
        ));
    }
}
