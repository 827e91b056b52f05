mod oracles;

use fedsel_core::orchestrator::{
    measure_distances, prepare_cohort, select_collaborators, ExperimentConfig, PeerDistance, SelectionPolicy,
};
use fedsel_core::privacy::Epsilon;
use proptest::prelude::*;

fn distances(values: &[f64]) -> Vec<PeerDistance> {
    values
        .iter()
        .enumerate()
        .map(|(i, &d)| PeerDistance {
            peer: i,
            client_id: format!("P{i}"),
            rate: i as f64 / 10.0,
            distance: d,
        })
        .collect()
}

#[test]
fn noiseless_selection_is_a_rate_prefix() {
    let mut cfg = ExperimentConfig {
        epsilon: Epsilon::NoNoise,
        seed: 4,
        ..ExperimentConfig::default()
    };
    cfg.partition.per_cluster_train = 60;
    let cohort = prepare_cohort(&cfg).unwrap();
    let report = measure_distances(&cohort, &cfg, Epsilon::NoNoise).unwrap();
    let d: Vec<f64> = report.distances.iter().map(|p| p.distance).collect();
    let rates: Vec<f64> = report.distances.iter().map(|p| p.rate).collect();
    assert!(oracles::spearman(&rates, &d) >= 0.9, "{d:?}");
    for step in 1..=20 {
        let policy = SelectionPolicy::Custom(step as f64 * 0.05);
        let sel = select_collaborators(&report.distances, policy);
        let by_rate: Vec<usize> = (0..sel.selected.len()).collect();
        if d.windows(2).all(|w| w[0] < w[1]) {
            assert_eq!(sel.selected, by_rate, "fraction {}", policy.fraction());
        }
        let within: Vec<usize> = (0..d.len()).filter(|&i| d[i] <= sel.tau).collect();
        assert_eq!(sel.selected, within);
    }
    let strict = select_collaborators(&report.distances, SelectionPolicy::Strict);
    assert!(!strict.selected.is_empty());
    assert!(strict.selected.contains(&0), "the r = 0 peer is always closest enough");
}

proptest! {
    #[test]
    fn selection_is_thresholded_and_nested(values in proptest::collection::vec(0.0f64..10.0, 1..15), a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let d = distances(&values);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let strict = select_collaborators(&d, SelectionPolicy::Custom(lo));
        let lenient = select_collaborators(&d, SelectionPolicy::Custom(hi));
        let max = values.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(strict.tau, lo * max);
        for s in &strict.selected {
            prop_assert!(lenient.selected.contains(s));
        }
        let expected: Vec<usize> = (0..values.len()).filter(|&i| values[i] <= hi * max).collect();
        prop_assert_eq!(&lenient.selected, &expected);
    }

    #[test]
    fn sorted_distances_give_prefixes(mut values in proptest::collection::vec(0.0f64..10.0, 1..15), f in 0.01f64..=1.0) {
        values.sort_by(f64::total_cmp);
        let sel = select_collaborators(&distances(&values), SelectionPolicy::Custom(f));
        let prefix: Vec<usize> = (0..sel.selected.len()).collect();
        prop_assert_eq!(sel.selected, prefix);
    }
}
