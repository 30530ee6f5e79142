use std::collections::BTreeMap;

use poolrank::candidates::Dataset;
use poolrank::evaluation::{
    expert_utilization, mean_selected_scores, oracle_scores, order_by_sums, recall_at_k, rerank_dataset,
    significance_report,
};
use poolrank::features::FeatureStore;
use poolrank::metrics::{MetricId, MetricRegistry};
use poolrank::moe::{init_model, ModelConfig};
use poolrank::synthetic::{generate, SyntheticConfig};
use proptest::prelude::*;

fn native() -> Vec<MetricId> {
    MetricRegistry::native().iter().cloned().collect()
}

fn small_set(seed: u64, candidates: usize) -> Dataset {
    generate(&SyntheticConfig {
        examples: 12,
        candidates,
        seed,
        ..Default::default()
    })
    .unwrap()
    .dataset
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ordering_ignores_constant_shift(
        sums in proptest::collection::vec(0u8..5, 1..16),
        shift in -10.0f64..10.0,
    ) {
        // Small integers keep ties exact after the shift.
        let base: Vec<f64> = sums.iter().map(|&s| f64::from(s) * 0.25).collect();
        let shifted: Vec<f64> = base.iter().map(|x| x + shift.round()).collect();
        let keys: Vec<usize> = (0..base.len()).collect();
        let order = order_by_sums(&base, &keys);
        prop_assert_eq!(&order, &order_by_sums(&shifted, &keys));
        let mut sorted = order.clone();
        sorted.sort();
        prop_assert_eq!(sorted, keys);
    }

    #[test]
    fn selected_never_beats_oracle_and_curves_rise(seed in 0u64..1000, candidates in 2usize..9) {
        let ds = small_set(seed, candidates);
        let feats = FeatureStore::inline(&ds).unwrap();
        let metrics = native();
        let methods = ["beam", "sampling"];
        let mut cfg = ModelConfig::new(feats.dim(), metrics.len());
        cfg.bottom_hidden = [8, 8];
        cfg.expert_hidden = [8, 8];
        cfg.seed = seed;
        let model = init_model(cfg, metrics.iter().map(|m| m.to_string()).collect(),
            methods.iter().map(|m| m.to_string()).collect()).unwrap();
        let outcomes = rerank_dataset(&model, &ds, &methods, &feats).unwrap();

        let selected = mean_selected_scores(&outcomes, &metrics).unwrap();
        let oracle = oracle_scores(&ds, &metrics, &methods).unwrap();
        for m in &metrics {
            prop_assert!(selected[m.as_str()] <= oracle[m.as_str()] + 1e-12);
        }
        for o in &outcomes {
            let mut r = o.ranking.clone();
            r.sort();
            let mut p = o.pool.clone();
            p.sort();
            prop_assert_eq!(r, p);
            prop_assert_eq!(o.selected, o.ranking[0]);
        }

        let curve = recall_at_k(&outcomes, &ds, &metrics, &methods, candidates).unwrap();
        for c in [&curve.model, &curve.random, &curve.base_order] {
            prop_assert!(c.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
            prop_assert!(c.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            prop_assert!((c[c.len() - 1] - 1.0).abs() < 1e-12);
        }

        for row in expert_utilization(&model, &ds, &methods, &feats).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&g| g >= 0.0));
        }
    }

    #[test]
    fn significance_monotone_in_baseline_spread(
        a in proptest::collection::vec(0.0f64..1.0, 5..20),
        deltas in proptest::collection::vec(0.05f64..0.3, 20),
        noise in proptest::collection::vec(-0.5f64..0.5, 20),
        scale in 1.0f64..4.0,
    ) {
        // Scaling the noise up only raises the p-value.
        let n = a.len();
        let make = |s: f64| -> BTreeMap<String, Vec<f64>> {
            let b = (0..n).map(|i| a[i] - deltas[i] + s * noise[i] * 0.1).collect();
            BTreeMap::from([("beam".to_string(), b)])
        };
        let tight = significance_report(&a, &make(1.0), 0.05).unwrap();
        let loose = significance_report(&a, &make(scale), 0.05).unwrap();
        if loose.significant {
            prop_assert!(tight.significant || tight.p_values["beam"] >= loose.p_values["beam"]);
        }
    }
}

#[test]
fn merged_oracle_dominates_each_method() {
    let ds = small_set(4, 8);
    let metrics = native();
    let merged = oracle_scores(&ds, &metrics, &["beam", "sampling"]).unwrap();
    for method in ["beam", "sampling"] {
        let single = oracle_scores(&ds, &metrics, &[method]).unwrap();
        for m in &metrics {
            assert!(merged[m.as_str()] >= single[m.as_str()]);
        }
    }
}

#[test]
fn raising_a_p_value_never_creates_significance() {
    let a = vec![0.5, 0.6, 0.7, 0.55, 0.65, 0.62];
    let close: Vec<f64> = a.iter().map(|x| x - 0.1).collect();
    let far: Vec<f64> = a.iter().enumerate().map(|(i, x)| x - 0.1 + if i % 2 == 0 { 0.09 } else { -0.09 }).collect();
    let mut baselines = BTreeMap::from([("beam".to_string(), close.clone())]);
    let base = significance_report(&a, &baselines, 0.05).unwrap();
    baselines.insert("beam".to_string(), far);
    let worse = significance_report(&a, &baselines, 0.05).unwrap();
    assert!(worse.p_values["beam"] > base.p_values["beam"]);
    assert!(base.significant || !worse.significant);
}
