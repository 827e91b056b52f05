mod oracles;

use fedsel_core::seed;
use fedsel_core::similarity::{emd, ClusterHistogram, ClusterModel};
use oracles::transport_brute_force;
use rand::Rng;

fn random_histogram(rng: &mut impl Rng, k: usize, sparse: bool) -> ClusterHistogram {
    let mut w: Vec<f64> = (0..k)
        .map(|_| if sparse && rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    if w.iter().sum::<f64>() == 0.0 {
        w[rng.gen_range(0..k)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    // absorb rounding so the weights sum to one within the constructor's check
    let drift = 1.0 - w.iter().sum::<f64>();
    let last = w.iter().rposition(|&x| x > 0.0).unwrap();
    w[last] += drift;
    ClusterHistogram::new(w).unwrap()
}

fn random_model(rng: &mut impl Rng, k: usize, dim: usize) -> ClusterModel {
    let centroids = (0..k).map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    ClusterModel::new(centroids, Vec::new())
}

#[test]
fn matches_brute_force_for_small_k() {
    let mut rng = seed::rng(8);
    let mut checked = 0;
    for k in 1..=4 {
        for _ in 0..60 {
            let model = random_model(&mut rng, k, 3);
            let p = random_histogram(&mut rng, k, true);
            let q = random_histogram(&mut rng, k, true);
            let (got, plan) = emd(&p, &q, &model).unwrap();
            let want = transport_brute_force(p.weights(), q.weights(), &model.ground_distance);
            assert!((got - want).abs() <= 1e-9, "k={k}: {got} vs {want}");
            for (a, b) in plan.row_sums().iter().zip(p.weights()) {
                assert!((a - b).abs() < 1e-9);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 240);
}

#[test]
fn metric_axioms_on_random_pairs() {
    let mut rng = seed::rng(9);
    let model = random_model(&mut rng, 6, 4);
    for _ in 0..1000 {
        let p = random_histogram(&mut rng, 6, true);
        let q = random_histogram(&mut rng, 6, true);
        let r = random_histogram(&mut rng, 6, true);
        let d = |a: &ClusterHistogram, b: &ClusterHistogram| emd(a, b, &model).unwrap().0;
        let (pq, qp) = (d(&p, &q), d(&q, &p));
        assert!(pq >= 0.0);
        assert!(d(&p, &p).abs() <= 1e-12);
        assert!((pq - qp).abs() <= 1e-9, "symmetry: {pq} vs {qp}");
        assert!(d(&p, &r) <= pq + d(&q, &r) + 1e-7, "triangle");
    }
}

#[test]
fn collinear_centroids() {
    let model = ClusterModel::new(vec![vec![0.0], vec![1.0], vec![2.0]], Vec::new());
    let p = ClusterHistogram::new(vec![0.5, 0.5, 0.0]).unwrap();
    let q = ClusterHistogram::new(vec![0.0, 0.5, 0.5]).unwrap();
    let (d, _) = emd(&p, &q, &model).unwrap();
    assert!((d - 1.0).abs() <= 1e-9, "{d}");
}
