use std::fmt;
use std::path::PathBuf;

use crate::data::{
    generate_synthetic, labeled_from_csv, load_cifar_binary, load_idx, LabeledData, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::fl::{Algorithm, LocalSpec};
use crate::privacy::{Epsilon, SensitivityMode};
use crate::seed::{self, stream};
use crate::similarity::KMeansConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Generated blobs; the spec's own seed is ignored in favour of the
    /// experiment seed.
    Synthetic(SyntheticSpec),
    Idx { images: PathBuf, labels: PathBuf },
    Cifar { path: PathBuf },
    /// Labelled CSV as written by [`crate::data::labeled_to_csv`].
    Csv { path: PathBuf },
}

impl DatasetSource {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetSource::Synthetic(_) => "synthetic",
            DatasetSource::Idx { .. } => "idx",
            DatasetSource::Cifar { .. } => "cifar",
            DatasetSource::Csv { .. } => "csv",
        }
    }

    pub fn load(&self, master_seed: u64) -> Result<LabeledData> {
        match self {
            DatasetSource::Synthetic(spec) => {
                let spec = SyntheticSpec {
                    seed: seed::derive(master_seed, &[stream::SYNTHETIC]),
                    ..spec.clone()
                };
                Ok(generate_synthetic(&spec)?.data)
            }
            DatasetSource::Idx { images, labels } => load_idx(images, labels),
            DatasetSource::Cifar { path } => load_cifar_binary(path),
            DatasetSource::Csv { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                labeled_from_csv(&text)
            }
        }
    }

    /// Files whose content determines the pool.
    pub fn files(&self) -> Vec<PathBuf> {
        match self {
            DatasetSource::Synthetic(_) => Vec::new(),
            DatasetSource::Idx { images, labels } => vec![images.clone(), labels.clone()],
            DatasetSource::Cifar { path } | DatasetSource::Csv { path } => vec![path.clone()],
        }
    }
}

/// Collaborator threshold as a fraction of the largest peer distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionPolicy {
    Strict,
    Lenient,
    Custom(f64),
}

impl SelectionPolicy {
    pub fn fraction(&self) -> f64 {
        match *self {
            SelectionPolicy::Strict => 0.30,
            SelectionPolicy::Lenient => 0.60,
            SelectionPolicy::Custom(f) => f,
        }
    }

    /// Named policy when the fraction matches one, custom otherwise.
    pub fn from_fraction(f: f64) -> Result<Self> {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::validation(format!(
                "policy.fraction must be in (0, 1], got {f}"
            )));
        }
        Ok(if f == 0.30 {
            SelectionPolicy::Strict
        } else if f == 0.60 {
            SelectionPolicy::Lenient
        } else {
            SelectionPolicy::Custom(f)
        })
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPolicy::Strict => f.write_str("strict"),
            SelectionPolicy::Lenient => f.write_str("lenient"),
            SelectionPolicy::Custom(x) => write!(f, "custom({x})"),
        }
    }
}

/// Which clustering the histograms are taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterSource {
    /// K-means fitted by the server on the pooled noisy client features.
    #[default]
    Pooled,
    /// The reference clustering of the noiseless projected pool.
    Reference,
}

/// Input space of the federated classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSpace {
    #[default]
    Raw,
    Pca,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    /// Size of the public subset the PCA anchor is fitted on.
    pub public_size: usize,
    pub per_cluster_train: usize,
    pub test_size: usize,
    /// One peer client is built per entry.
    pub rates: Vec<f64>,
    /// Fixed target clusters; drawn from the seed when `None`.
    pub target_clusters: Option<Vec<usize>>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            public_size: 500,
            per_cluster_train: 400,
            test_size: 300,
            rates: (0..=10).map(|i| i as f64 / 10.0).collect(),
            target_clusters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub alpha: f64,
    pub rounds: usize,
    /// Cases and controls drawn per round.
    pub sample_size: usize,
    pub epsilons: Vec<Epsilon>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            rounds: 50,
            sample_size: 100,
            epsilons: [0.1, 1.0, 10.0, 100.0, 1000.0]
                .into_iter()
                .map(Epsilon::Finite)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub partition: PartitionConfig,
    pub epsilon: Epsilon,
    pub sensitivity: SensitivityMode,
    pub pca_components: usize,
    /// `k`, `max_iter` and `tolerance` are used; seeds are derived.
    pub kmeans: KMeansConfig,
    pub cluster_source: ClusterSource,
    pub policy: SelectionPolicy,
    pub algorithm: Algorithm,
    /// The seed field is derived from `seed`.
    pub local: LocalSpec,
    pub rounds: usize,
    pub hidden: Vec<usize>,
    pub features: FeatureSpace,
    pub attack: AttackConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            partition: PartitionConfig::default(),
            epsilon: Epsilon::Finite(10.0),
            sensitivity: SensitivityMode::CoordinateRange,
            pca_components: 50,
            kmeans: KMeansConfig::default(),
            cluster_source: ClusterSource::Pooled,
            policy: SelectionPolicy::Strict,
            algorithm: Algorithm::FedAvg,
            local: LocalSpec::default(),
            rounds: 20,
            hidden: vec![64],
            features: FeatureSpace::Raw,
            attack: AttackConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.partition;
        if p.per_cluster_train == 0 {
            return Err(Error::validation("partition.per_cluster_train must be at least 1"));
        }
        if p.test_size == 0 {
            return Err(Error::validation("partition.test_size must be at least 1"));
        }
        if let Some(r) = p.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::validation(format!(
                "partition.rates: {r} outside [0, 1]"
            )));
        }
        if let Some(t) = &p.target_clusters {
            if t.len() != 3 || t[0] == t[1] || t[0] == t[2] || t[1] == t[2] {
                return Err(Error::validation(
                    "partition.target_clusters must list 3 distinct clusters",
                ));
            }
        }
        if self.pca_components == 0 {
            return Err(Error::validation("pca.components must be at least 1"));
        }
        if p.public_size <= self.pca_components {
            return Err(Error::validation(format!(
                "partition.public_size must exceed pca.components ({})",
                self.pca_components
            )));
        }
        if self.kmeans.k < 2 {
            return Err(Error::validation("cluster.k must be at least 2"));
        }
        if self.kmeans.max_iter == 0 {
            return Err(Error::validation("cluster.max_iter must be at least 1"));
        }
        if !(self.kmeans.tolerance >= 0.0 && self.kmeans.tolerance.is_finite()) {
            return Err(Error::validation("cluster.tolerance must be finite and >= 0"));
        }
        if let Epsilon::Finite(e) = self.epsilon {
            Epsilon::finite(e).map_err(|_| {
                Error::validation(format!("ldp.epsilon must be > 0, got {e}"))
            })?;
        }
        let f = self.policy.fraction();
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::validation(format!(
                "policy.fraction must be in (0, 1], got {f}"
            )));
        }
        self.algorithm.validate()?;
        self.local
            .validate()
            .map_err(|e| Error::validation(format!("fl: {e}")))?;
        if self.hidden.contains(&0) {
            return Err(Error::validation("model.hidden widths must be at least 1"));
        }
        let a = &self.attack;
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return Err(Error::validation(format!(
                "attack.alpha must be in (0, 1), got {}",
                a.alpha
            )));
        }
        if a.rounds == 0 || a.sample_size == 0 {
            return Err(Error::validation("attack.rounds and attack.sample_size must be at least 1"));
        }
        Ok(())
    }

    /// Local spec with the seed taken from the experiment seed and `salt`.
    pub fn local_spec(&self, salt: u64) -> LocalSpec {
        LocalSpec {
            seed: seed::derive(self.seed, &[stream::LOCAL_TRAIN, salt]),
            ..self.local.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}
