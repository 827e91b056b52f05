#![allow(dead_code)]

use fedsel_core::data::{ClientDataset, Sample};
use fedsel_core::seed;
use rand::Rng;

/// Two Gaussian classes in `dim` dimensions; `flip` swaps the labels.
pub fn toy_samples(n: usize, dim: usize, flip: bool, seed: u64) -> Vec<Sample> {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let centre = if label == 0 { -1.0 } else { 1.0 };
            let pixels = (0..dim).map(|_| centre + rng.gen_range(-0.8..0.8)).collect();
            Sample {
                pixels,
                label: if flip { 1 - label } else { label },
            }
        })
        .collect()
}

pub fn toy_client(id: &str, n: usize, dim: usize, flip: bool, seed: u64, with_test: bool) -> ClientDataset {
    let train = toy_samples(n, dim, flip, seed);
    let test = if with_test {
        toy_samples(200, dim, false, seed ^ 0xabcd)
    } else {
        Vec::new()
    };
    ClientDataset {
        client_id: id.to_string(),
        provenance: vec![(0, train.len())],
        train_index: (0..train.len()).collect(),
        test_index: (0..test.len()).collect(),
        train,
        test,
    }
}

pub fn uniform_vec(len: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}
