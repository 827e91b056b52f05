//! Lloyd's algorithm with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, FeatureMatrix};
use crate::seed;

use super::ClusterModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the relative inertia improvement falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 15,
            max_iter: 300,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

/// Index of the nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(data: &FeatureMatrix, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = data.rows();
    let mut centroids = vec![data.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = data
        .iter_rows()
        .map(|r| squared_distance(r, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // never land on a zero-weight row through round-off
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = data.row(pick).to_vec();
        for (i, r) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Fits K centroids. Iterates until the assignment is a fixpoint, the
/// relative inertia change drops under `tolerance`, or `max_iter` is reached.
/// A cluster left empty is re-seeded with the row farthest from its centroid.
pub fn kmeans_fit(data: &FeatureMatrix, cfg: &KMeansConfig) -> Result<ClusterModel> {
    let n = data.rows();
    if cfg.k == 0 {
        return Err(Error::precondition("k must be >= 1"));
    }
    if n < cfg.k {
        return Err(Error::Capacity {
            cluster: cfg.k,
            available: n,
            required: cfg.k,
        });
    }
    let mut rng = seed::rng(cfg.seed);
    let mut centroids = plus_plus_init(data, cfg.k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    let dim = data.cols();

    for _ in 0..cfg.max_iter.max(1) {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for (i, row) in data.iter_rows().enumerate() {
            let (c, d) = nearest(row, &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dist[i] = d;
        }

        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (row, &c) in data.iter_rows().zip(&assignment) {
            counts[c] += 1;
            sums[c].iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
        for c in 0..cfg.k {
            if counts[c] == 0 {
                // take the worst-served row from a cluster that can spare it
                let far = (0..n)
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    let old = assignment[i];
                    counts[old] -= 1;
                    sums[old].iter_mut().zip(data.row(i)).for_each(|(s, v)| *s -= v);
                    assignment[i] = c;
                    counts[c] = 1;
                    sums[c] = data.row(i).to_vec();
                    dist[i] = 0.0;
                    changed = true;
                }
            }
        }
        for c in 0..cfg.k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s * inv).collect();
            }
        }
        let inertia: f64 = data
            .iter_rows()
            .zip(&assignment)
            .map(|(r, &c)| squared_distance(r, &centroids[c]))
            .sum();
        if let Some(&prev) = history.last() {
            debug_assert!(
                inertia <= prev * (1.0 + 1e-12) + 1e-12,
                "inertia rose from {prev} to {inertia}"
            );
        }
        let prev = history.last().copied();
        history.push(inertia);
        if !changed {
            break;
        }
        if let Some(prev) = prev {
            if prev - inertia <= cfg.tolerance * prev {
                break;
            }
        }
    }

    Ok(ClusterModel::new(centroids, history))
}
