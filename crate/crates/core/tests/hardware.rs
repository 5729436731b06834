mod common;

use eenn_core::hardware::{
    energy_estimate, segment_latency, stage_latency, transfer_latency, worst_case_latency, Link, SegmentLoad,
};
use eenn_core::search_space::{map_to_processors, Architecture};
use eenn_core::Backbone;
use proptest::prelude::*;

fn speech() -> Backbone {
    Backbone::from_json(&common::fixture("speech_model.json")).unwrap()
}

proptest! {
    #[test]
    fn segment_latency_is_monotone(a in 0u64..1 << 40, b in 0u64..1 << 40, rate in 1e3f64..1e12) {
        let p = common::processor("p", rate, 1.0, 0.0);
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(segment_latency(lo, &p) <= segment_latency(hi, &p));
        prop_assert!(segment_latency(lo, &p) >= 0.0);
    }

    #[test]
    fn transfer_latency_is_monotone(a in 0u64..1 << 40, b in 0u64..1 << 40, bps in 1.0f64..1e10) {
        let l = Link { from: "a".into(), to: "b".into(), bytes_per_second: bps };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(transfer_latency(lo, &l) <= transfer_latency(hi, &l));
    }

    #[test]
    fn stage_latency_grows_with_load(macs in 0u64..1 << 30, extra in 0u64..1 << 30, bytes in 0u64..1 << 24) {
        let plat = common::chain(
            vec![common::processor("a", 1e6, 1.0, 0.1), common::processor("b", 1e7, 2.0, 0.1)],
            1e5,
            1e9,
        );
        let load = |m, b| SegmentLoad { processor: 1, macs: m, inbound_bytes: b, params_bytes: 0, peak_activation_bytes: 0 };
        let base = stage_latency(&load(macs, bytes), &plat).unwrap();
        prop_assert!(base <= stage_latency(&load(macs + extra, bytes), &plat).unwrap());
        prop_assert!(base <= stage_latency(&load(macs, bytes + extra % (1 << 24)), &plat).unwrap());
    }

    /// On equal processors an extra split only adds a branch and a
    /// transfer, so dropping an exit never lengthens the full-depth path.
    #[test]
    fn removing_an_exit_never_raises_worst_case(
        loc_a in 0usize..5,
        loc_b in 0usize..5,
        drop_first in any::<bool>(),
        rate in 1e6f64..1e9,
        bps in 1e3f64..1e9,
    ) {
        let bb = speech();
        let plat = common::chain((0..3).map(|i| common::processor(&format!("p{i}"), rate, 1.0, 0.0)).collect(), bps, 100.0);
        let arch = Architecture::new(vec![loc_a, loc_b]);
        let dropped = arch.exit_locations[if drop_first { 0 } else { arch.early_exits() - 1 }];
        let fewer = arch.without_exit(dropped);
        let wc = |a: &Architecture| {
            let m = map_to_processors(a, bb.blocks().len(), &plat);
            worst_case_latency(&bb.segment_loads(&m), &plat).unwrap()
        };
        prop_assert!(wc(&fewer) <= wc(&arch) + 1e-12);
    }

    #[test]
    fn zero_sleep_energy_is_latency_times_active_power(
        lat in prop::collection::vec(0.0f64..10.0, 3),
        power in prop::collection::vec(0.0f64..1000.0, 3),
        executed in 0usize..=3,
    ) {
        let plat = common::chain(
            (0..3).map(|i| common::processor(&format!("p{i}"), 1e6, power[i], 0.0)).collect(),
            1e6,
            1e9,
        );
        let bb = speech();
        let m = map_to_processors(&Architecture::new(vec![0, 2]), bb.blocks().len(), &plat);
        let e = energy_estimate(&m, &lat, &plat, executed).unwrap();
        let expected: f64 = (0..executed).map(|i| lat[i] * power[i]).sum();
        prop_assert!((e - expected).abs() <= 1e-9 * expected.max(1.0));
    }
}

#[test]
fn speech_fixture_worst_cases() {
    let bb = speech();
    let plat = eenn_core::hardware::Platform::from_json(&common::fixture("speech_hardware.json")).unwrap();
    let m = map_to_processors(&Architecture::backbone_only(), bb.blocks().len(), &plat);
    let wc = worst_case_latency(&bb.segment_loads(&m), &plat).unwrap();
    // backbone alone on the first processor
    assert!((wc - bb.total_macs() as f64 / 10e6).abs() < 1e-12);
}
