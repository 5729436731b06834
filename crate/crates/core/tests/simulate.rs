mod common;

use eenn_core::decision::{predict_cascade, ThresholdConfig, ThresholdGrid};
use eenn_core::simulate::{compare, simulate_cascade};
use proptest::prelude::*;

fn grid_config(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::sample::select(ThresholdGrid::default().values().to_vec()), k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_a_naive_loop(case in common::joint_case(4, 60), t in grid_config(4)) {
        let k = case.k();
        let th = &t[..k];
        let ids = case.ids();
        let exits: Vec<&str> = ids.iter().map(String::as_str).collect();
        let sim = simulate_cascade(&exits, &ThresholdConfig::new(th.to_vec()), &case.records(), &case.stages).unwrap();

        let n = case.columns[0].len();
        let (mut correct, mut macs, mut energy) = (0usize, 0.0, 0.0);
        let mut hist = vec![0u64; k + 1];
        for s in 0..n {
            let stop = (0..k).find(|&i| case.columns[i][s].confidence >= th[i]).unwrap_or(k);
            hist[stop] += 1;
            correct += case.columns[stop][s].correct as usize;
            for st in &case.stages[..=stop] {
                macs += st.macs;
                energy += st.energy_mj;
            }
        }
        prop_assert_eq!(&sim.histogram, &hist);
        prop_assert_eq!(sim.n_samples, n as u64);
        prop_assert!((sim.metrics.accuracy - correct as f64 / n as f64).abs() < 1e-12);
        prop_assert!((sim.metrics.mean_macs - macs / n as f64).abs() <= 1e-9 * macs.max(1.0));
        prop_assert!((sim.metrics.mean_energy_mj - energy / n as f64).abs() <= 1e-9 * energy.max(1.0));
    }

    #[test]
    fn no_exits_gives_backbone_metrics(case in common::joint_case(0, 60)) {
        let sim = simulate_cascade(&[], &ThresholdConfig::new(vec![]), &case.records(), &case.stages).unwrap();
        let fin = &case.profiles()[0];
        prop_assert_eq!(sim.metrics.accuracy, fin.standalone_accuracy());
        prop_assert_eq!(sim.metrics.mean_macs, case.stages[0].macs);
        prop_assert_eq!(sim.histogram, vec![case.columns[0].len() as u64]);
    }

    #[test]
    fn raising_a_threshold_never_lowers_simulated_cost(case in common::joint_case(3, 60), t in grid_config(3), which in any::<prop::sample::Index>(), up in 0.0f64..0.6) {
        let k = case.k();
        prop_assume!(k > 0);
        let ids = case.ids();
        let exits: Vec<&str> = ids.iter().map(String::as_str).collect();
        let records = case.records();
        let lo = t[..k].to_vec();
        let mut hi = lo.clone();
        hi[which.index(k)] += up;
        let a = simulate_cascade(&exits, &ThresholdConfig::new(lo), &records, &case.stages).unwrap();
        let b = simulate_cascade(&exits, &ThresholdConfig::new(hi), &records, &case.stages).unwrap();
        prop_assert!(b.metrics.mean_macs >= a.metrics.mean_macs - 1e-9);
        prop_assert!(b.metrics.mean_energy_mj >= a.metrics.mean_energy_mj - 1e-9);
    }

    /// With a single exit, termination rates and costs are exact; only the
    /// final classifier's accuracy on the survivors is estimated.
    #[test]
    fn single_exit_rates_and_costs_are_exact(case in common::joint_case(1, 60), t in grid_config(1)) {
        prop_assume!(case.k() == 1);
        let profiles = case.profiles();
        let c = common::cascade(&profiles, &case.stages);
        let cfg = ThresholdConfig::new(t);
        let Ok(pred) = predict_cascade(&c, &cfg) else { return Ok(()) };
        let sim = simulate_cascade(&["e0"], &cfg, &case.records(), &case.stages).unwrap();
        let d = compare(&pred, &sim);
        for delta in d.deltas.iter().filter(|d| d.metric != "accuracy") {
            prop_assert!(delta.absolute.abs() <= 1e-9, "{:?}", delta);
        }
    }
}
