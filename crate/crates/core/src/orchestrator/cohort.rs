use log::warn;
use rand::seq::SliceRandom;

use super::config::{ClusterSource, ExperimentConfig, FeatureSpace, SelectionPolicy};
use crate::data::{
    build_peer_client, build_target_client, cluster_members, ClientDataset, LabeledData,
    PartitionPlan, Sample,
};
use crate::error::{Error, Result};
use crate::features::{pca_fit, pca_project, PcaModel};
use crate::matrix::FeatureMatrix;
use crate::privacy::{privatize, Epsilon};
use crate::seed::{self, stream};
use crate::similarity::{assign_histogram, emd, kmeans_fit, ClusterHistogram, ClusterModel, KMeansConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Peer {
    pub client: ClientDataset,
    pub rate: f64,
}

/// Everything built before any client shares anything: the pool, the public
/// PCA anchor, the reference clustering used to carve out clients, and the
/// clients themselves.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub pool: LabeledData,
    pub n_classes: usize,
    pub public_index: Vec<usize>,
    pub pca: PcaModel,
    pub projected_pool: FeatureMatrix,
    pub reference: ClusterModel,
    pub pool_clusters: Vec<usize>,
    pub plan: PartitionPlan,
    pub target: ClientDataset,
    pub peers: Vec<Peer>,
}

impl Cohort {
    /// Projected training features of the target (`None`) or a peer.
    pub fn projected_train(&self, peer: Option<usize>) -> FeatureMatrix {
        let client = match peer {
            None => &self.target,
            Some(i) => &self.peers[i].client,
        };
        self.projected_pool.select_rows(&client.train_index)
    }

    /// Clients in the classifier's input space.
    pub fn training_view(&self, space: FeatureSpace) -> (ClientDataset, Vec<ClientDataset>) {
        let convert = |c: &ClientDataset| match space {
            FeatureSpace::Raw => c.clone(),
            FeatureSpace::Pca => {
                let project = |idx: &[usize]| -> Vec<Sample> {
                    idx.iter()
                        .map(|&i| Sample {
                            pixels: self.projected_pool.row(i).to_vec(),
                            label: self.pool.labels[i],
                        })
                        .collect()
                };
                ClientDataset {
                    train: project(&c.train_index),
                    test: project(&c.test_index),
                    ..c.clone()
                }
            }
        };
        (
            convert(&self.target),
            self.peers.iter().map(|p| convert(&p.client)).collect(),
        )
    }

    pub fn input_dim(&self, space: FeatureSpace) -> usize {
        match space {
            FeatureSpace::Raw => self.pool.dim(),
            FeatureSpace::Pca => self.pca.n_components(),
        }
    }
}

pub fn peer_id(i: usize) -> String {
    format!("P{:02}", i + 1)
}

fn choose_target_clusters(
    cfg: &ExperimentConfig,
    pool_clusters: &[usize],
    k: usize,
) -> Result<Vec<usize>> {
    if let Some(t) = &cfg.partition.target_clusters {
        if let Some(&c) = t.iter().find(|&&c| c >= k) {
            return Err(Error::validation(format!(
                "partition.target_clusters: cluster {c} does not exist (k = {k})"
            )));
        }
        return Ok(t.clone());
    }
    let members = cluster_members(pool_clusters);
    let need = cfg.partition.per_cluster_train + cfg.partition.test_size.div_ceil(3);
    let eligible: Vec<usize> = members
        .iter()
        .filter(|(_, rows)| rows.len() >= need)
        .map(|(&c, _)| c)
        .collect();
    if eligible.len() < 3 {
        let (&cluster, rows) = members
            .iter()
            .max_by_key(|(_, rows)| rows.len())
            .expect("pool is non-empty");
        return Err(Error::Capacity {
            cluster,
            available: rows.len(),
            required: need,
        });
    }
    let mut rng = seed::derived_rng(cfg.seed, &[stream::TARGET_CLUSTERS]);
    let mut chosen: Vec<usize> = eligible.choose_multiple(&mut rng, 3).copied().collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Loads the pool, fits the public PCA anchor and the reference clustering,
/// then builds the target client and one peer per configured rate.
pub fn prepare_cohort(cfg: &ExperimentConfig) -> Result<Cohort> {
    cfg.validate()?;
    let pool = cfg.dataset.load(cfg.seed)?;
    prepare_cohort_from_pool(cfg, pool)
}

pub fn prepare_cohort_from_pool(cfg: &ExperimentConfig, pool: LabeledData) -> Result<Cohort> {
    if pool.len() <= cfg.partition.public_size {
        return Err(Error::precondition(format!(
            "pool has {} rows, the public subset alone needs {}",
            pool.len(),
            cfg.partition.public_size
        )));
    }
    if cfg.pca_components > pool.dim() {
        return Err(Error::validation(format!(
            "pca.components = {} exceeds the data dimension {}",
            cfg.pca_components,
            pool.dim()
        )));
    }
    let mut rng = seed::derived_rng(cfg.seed, &[stream::PUBLIC_SUBSET]);
    let mut public_index: Vec<usize> = (0..pool.len())
        .collect::<Vec<_>>()
        .choose_multiple(&mut rng, cfg.partition.public_size)
        .copied()
        .collect();
    public_index.sort_unstable();
    let pca = pca_fit(&pool.features.select_rows(&public_index), cfg.pca_components)?;
    let projected_pool = pca_project(&pca, &pool.features)?;

    let kcfg = KMeansConfig {
        seed: seed::derive(cfg.seed, &[stream::REFERENCE_KMEANS]),
        ..cfg.kmeans
    };
    let reference = kmeans_fit(&projected_pool, &kcfg)?;
    let pool_clusters = reference.assign(&projected_pool)?;

    let plan = PartitionPlan {
        target_clusters: choose_target_clusters(cfg, &pool_clusters, reference.k())?,
        per_cluster_train: cfg.partition.per_cluster_train,
        dissimilarity_rates: cfg.partition.rates.clone(),
        test_size: cfg.partition.test_size,
        seed: cfg.seed,
    };
    let target = build_target_client(&pool, &pool_clusters, &plan)?;
    let peers = plan
        .dissimilarity_rates
        .iter()
        .enumerate()
        .map(|(i, &rate)| {
            let client = build_peer_client(
                &pool,
                &pool_clusters,
                &plan,
                rate,
                seed::derive(cfg.seed, &[stream::PEER_CLIENT, i as u64]),
                &target,
                &peer_id(i),
            )?;
            Ok(Peer { client, rate })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_classes = pool.n_classes();
    Ok(Cohort {
        pool,
        n_classes,
        public_index,
        pca,
        projected_pool,
        reference,
        pool_clusters,
        plan,
        target,
        peers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerDistance {
    pub peer: usize,
    pub client_id: String,
    pub rate: f64,
    pub distance: f64,
}

/// Server-side view after every client shared its noisy projection once.
#[derive(Debug, Clone)]
pub struct SimilarityReport {
    pub epsilon: Epsilon,
    pub model: ClusterModel,
    pub target_histogram: ClusterHistogram,
    pub peer_histograms: Vec<ClusterHistogram>,
    pub distances: Vec<PeerDistance>,
}

/// Noisy representation each client sends: index 0 is the target.
pub fn noisy_releases(cohort: &Cohort, cfg: &ExperimentConfig, epsilon: Epsilon) -> Result<Vec<FeatureMatrix>> {
    (0..=cohort.peers.len())
        .map(|c| {
            let projected = cohort.projected_train(c.checked_sub(1));
            privatize(&projected, epsilon, cfg.sensitivity, cfg.seed, c as u64, 0)
        })
        .collect()
}

/// Histograms and target-to-peer EMD at privacy budget `epsilon`.
pub fn measure_distances(
    cohort: &Cohort,
    cfg: &ExperimentConfig,
    epsilon: Epsilon,
) -> Result<SimilarityReport> {
    if cohort.peers.is_empty() {
        return Err(Error::precondition("selection needs at least one peer"));
    }
    let releases = noisy_releases(cohort, cfg, epsilon)?;
    let model = match cfg.cluster_source {
        ClusterSource::Reference => cohort.reference.clone(),
        ClusterSource::Pooled => {
            let parts: Vec<&FeatureMatrix> = releases.iter().collect();
            let pooled = FeatureMatrix::vstack(&parts)?;
            let kcfg = KMeansConfig {
                seed: seed::derive(cfg.seed, &[stream::SERVER_KMEANS]),
                ..cfg.kmeans
            };
            kmeans_fit(&pooled, &kcfg)?
        }
    };
    let mut histograms = releases
        .iter()
        .map(|r| assign_histogram(&model, r))
        .collect::<Result<Vec<_>>>()?;
    let target_histogram = histograms.remove(0);
    let distances = histograms
        .iter()
        .enumerate()
        .map(|(i, h)| {
            Ok(PeerDistance {
                peer: i,
                client_id: cohort.peers[i].client.client_id.clone(),
                rate: cohort.peers[i].rate,
                distance: emd(&target_histogram, h, &model)?.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityReport {
        epsilon,
        model,
        target_histogram,
        peer_histograms: histograms,
        distances,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub tau: f64,
    /// Peer indices with `distance <= tau`, in peer order.
    pub selected: Vec<usize>,
}

/// Keeps every peer within `fraction * max distance` (inclusive).
pub fn select_collaborators(distances: &[PeerDistance], policy: SelectionPolicy) -> Selection {
    let max = distances.iter().map(|d| d.distance).fold(0.0_f64, f64::max);
    let tau = policy.fraction() * max;
    let selected: Vec<usize> = distances
        .iter()
        .filter(|d| d.distance <= tau)
        .map(|d| d.peer)
        .collect();
    if selected.is_empty() {
        warn!("no peer within tau = {tau}; the target trains alone");
    }
    Selection { tau, selected }
}

/// The full selection pipeline at the configured budget and policy.
pub fn pqfed_select(cohort: &Cohort, cfg: &ExperimentConfig) -> Result<(Selection, SimilarityReport)> {
    let report = measure_distances(cohort, cfg, cfg.epsilon)?;
    Ok((select_collaborators(&report.distances, cfg.policy), report))
}

/// Peers sorted by ascending distance; ties keep peer order.
pub fn order_by_distance(distances: &[PeerDistance]) -> Vec<PeerDistance> {
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.peer.cmp(&b.peer)));
    sorted
}
