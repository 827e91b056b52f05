//! Server-side similarity: clustering of shared representations, per-client
//! cluster histograms, and Earth Mover's Distance between them.

mod emd;
mod kmeans;

use std::fmt::Write as _;

pub use emd::{transport, TransportPlan};
pub use kmeans::{kmeans_fit, KMeansConfig};

use crate::error::{Error, Result};
use crate::matrix::{euclidean, FeatureMatrix};

/// Fitted centroids and their pairwise Euclidean ground distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// Row-major `k x k` matrix.
    pub ground_distance: Vec<f64>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn new(centroids: Vec<Vec<f64>>, inertia_history: Vec<f64>) -> Self {
        let k = centroids.len();
        let mut ground_distance = vec![0.0; k * k];
        for i in 0..k {
            for j in i + 1..k {
                let d = euclidean(&centroids[i], &centroids[j]);
                ground_distance[i * k + j] = d;
                ground_distance[j * k + i] = d;
            }
        }
        Self {
            centroids,
            ground_distance,
            inertia: inertia_history.last().copied().unwrap_or(0.0),
            inertia_history,
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.ground_distance[i * self.k() + j]
    }

    /// Nearest centroid of every row (ties to the lowest index).
    pub fn assign(&self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        if features.cols() != self.dim() {
            return Err(Error::shape(format!(
                "features have {} columns, centroids have {}",
                features.cols(),
                self.dim()
            )));
        }
        Ok(features
            .iter_rows()
            .map(|r| kmeans::nearest(r, &self.centroids).0)
            .collect())
    }

    /// CSV with header `cluster,c0,c1,...`, one row per centroid.
    pub fn centroids_csv(&self) -> String {
        let mut out = String::from("cluster");
        for j in 0..self.dim() {
            let _ = write!(out, ",c{j}");
        }
        out.push('\n');
        for (c, row) in self.centroids.iter().enumerate() {
            let _ = write!(out, "{c}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// A client's share of rows per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHistogram {
    weights: Vec<f64>,
}

impl ClusterHistogram {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::validation("histogram weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "histogram weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn from_assignments(assignment: &[usize], k: usize) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::precondition("histogram of an empty feature set"));
        }
        let mut counts = vec![0usize; k];
        for &c in assignment {
            counts[c] += 1;
        }
        let n = assignment.len() as f64;
        Ok(Self {
            weights: counts.iter().map(|&c| c as f64 / n).collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }
}

pub fn assign_histogram(model: &ClusterModel, features: &FeatureMatrix) -> Result<ClusterHistogram> {
    if features.is_empty() {
        return Err(Error::precondition("histogram of an empty feature set"));
    }
    ClusterHistogram::from_assignments(&model.assign(features)?, model.k())
}

/// Earth Mover's Distance between two histograms over the same clustering,
/// with centroid distances as ground cost.
pub fn emd(
    p: &ClusterHistogram,
    q: &ClusterHistogram,
    model: &ClusterModel,
) -> Result<(f64, TransportPlan)> {
    if p.k() != model.k() || q.k() != model.k() {
        return Err(Error::shape(format!(
            "histograms over {} and {} clusters, model has {}",
            p.k(),
            q.k(),
            model.k()
        )));
    }
    let plan = transport(p.weights(), q.weights(), &model.ground_distance)?;
    Ok((plan.cost, plan))
}

/// EMD from the target histogram to each peer, in peer order.
pub fn client_distances(
    target: &ClusterHistogram,
    peers: &[(String, ClusterHistogram)],
    model: &ClusterModel,
) -> Result<Vec<(String, f64)>> {
    peers
        .iter()
        .map(|(id, h)| Ok((id.clone(), emd(target, h, model)?.0)))
        .collect()
}
