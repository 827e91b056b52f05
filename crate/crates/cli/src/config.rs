//! Flat `section.key = value` configuration on top of TOML.
//!
//! Layers are merged in order (preset, file, `--set` overrides) and the last
//! writer of a key wins. Every key is optional except `seed`, which the run
//! commands require.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fedsel_core::data::SyntheticSpec;
use fedsel_core::fl::Algorithm;
use fedsel_core::orchestrator::{
    ClusterSource, DatasetSource, ExperimentConfig, FeatureSpace, SelectionPolicy,
};
use fedsel_core::privacy::{Epsilon, SensitivityMode};
use sha2::{Digest, Sha256};
use toml::Value;

pub const KEYS: &[&str] = &[
    "seed",
    "dataset.kind",
    "dataset.path",
    "dataset.labels",
    "dataset.clusters",
    "dataset.dim",
    "dataset.samples_per_cluster",
    "dataset.spread",
    "dataset.classes",
    "partition.public_size",
    "partition.per_cluster_train",
    "partition.test_size",
    "partition.rates",
    "partition.target_clusters",
    "ldp.epsilon",
    "ldp.sensitivity",
    "pca.components",
    "cluster.k",
    "cluster.max_iter",
    "cluster.tolerance",
    "cluster.source",
    "policy.kind",
    "policy.fraction",
    "fl.algorithm",
    "fl.mu",
    "fl.lambda",
    "fl.ifca_models",
    "fl.learning_rate",
    "fl.batch_size",
    "fl.epochs",
    "fl.rounds",
    "fl.features",
    "model.hidden",
    "attack.alpha",
    "attack.rounds",
    "attack.sample_size",
    "attack.epsilons",
    "grid.repeats",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Syntax { origin: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
    #[error("`seed` is required: set it in the config file or with --set seed=<n>")]
    MissingSeed,
}

type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(key: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(format!("{key}: {message}"))
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub seed: Option<u64>,
    /// Coefficients kept even when the selected algorithm does not use
    /// them, so that grids can run every algorithm.
    pub mu: f64,
    pub lambda: f64,
    pub ifca_models: usize,
    /// Seeds per federation grid cell: `seed, seed + 1, ...`.
    pub repeats: usize,
}

impl RunConfig {
    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or(ConfigError::MissingSeed)
    }

    /// The experiment with the mandatory seed filled in.
    pub fn seeded(&self) -> Result<ExperimentConfig> {
        Ok(self.experiment.with_seed(self.require_seed()?))
    }

    pub fn algorithms(&self) -> Vec<Algorithm> {
        vec![
            Algorithm::FedAvg,
            Algorithm::FedProx { mu: self.mu },
            Algorithm::FedDyn { lambda: self.lambda },
            Algorithm::Ifca {
                models: self.ifca_models,
            },
        ]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Layers {
    values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(ConfigError::UnknownKey(key.to_string()))
    }
}

impl Layers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn merge_str(&mut self, text: &str, origin: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax {
            origin: origin.to_string(),
            message: e.message().to_string(),
        })?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        for (k, v) in flat {
            check_key(&k)?;
            self.values.insert(k, v);
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.merge_str(&text, &path.display().to_string())
    }

    /// Applies one `key=value` override. The value is read as a TOML value
    /// and falls back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: "--set".into(),
            message: format!("expected key=value, got `{assignment}`"),
        })?;
        let key = key.trim();
        check_key(key)?;
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: Value) {
        self.values.insert(key.to_string(), value);
    }

    pub fn build(&self) -> Result<RunConfig> {
        Reader { values: &self.values }.build()
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let mut layers = Layers::new();
    layers.merge_file(path)?;
    layers.build()
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut layers = Layers::new();
    layers.merge_str(text, "<string>")?;
    layers.build()
}

struct Reader<'a> {
    values: &'a BTreeMap<String, Value>,
}

impl Reader<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        debug_assert!(KEYS.contains(&key), "{key} missing from KEYS");
        self.values.get(key)
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => as_f64(v).ok_or_else(|| invalid(key, format!("expected a number, got {v}"))),
        }
    }

    fn u64_opt(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(invalid(key, format!("expected a non-negative integer, got {v}"))),
        }
    }

    fn usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.u64_opt(key)?.map_or(default, |v| v as usize))
    }

    /// Integer that must be at least `min`.
    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize> {
        let v = self.usize(key, default)?;
        if v < min {
            return Err(invalid(key, format!("must be >= {min}, got {v}")));
        }
        Ok(v)
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(invalid(key, format!("expected a string, got {v}"))),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| as_f64(v).ok_or_else(|| invalid(key, format!("expected numbers, got {v}"))))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(invalid(key, format!("expected an array of numbers, got {v}"))),
        }
    }

    fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    other => Err(invalid(key, format!("expected non-negative integers, got {other}"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(invalid(key, format!("expected an array of integers, got {v}"))),
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.f64(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(key, format!("must be > 0, got {v}")));
        }
        Ok(v)
    }

    fn non_negative(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.f64(key, default)?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(key, format!("must be >= 0, got {v}")));
        }
        Ok(v)
    }

    fn build(&self) -> Result<RunConfig> {
        let d = ExperimentConfig::default();
        let kind = self.string("dataset.kind")?.unwrap_or_else(|| "synthetic".into());
        let path = self.string("dataset.path")?.map(PathBuf::from);
        let need_path = |k: &str| {
            path.clone()
                .ok_or_else(|| invalid("dataset.path", format!("required for dataset.kind = {k}")))
        };
        let dataset = match kind.as_str() {
            "synthetic" => {
                let s = SyntheticSpec::default();
                DatasetSource::Synthetic(SyntheticSpec {
                    n_clusters: self.count("dataset.clusters", s.n_clusters, 2)?,
                    dim: self.count("dataset.dim", s.dim, 2)?,
                    samples_per_cluster: self.count("dataset.samples_per_cluster", s.samples_per_cluster, 1)?,
                    spread: self.positive("dataset.spread", s.spread)?,
                    n_classes: self.count("dataset.classes", s.n_classes, 2)?,
                    seed: 0,
                })
            }
            "idx" => DatasetSource::Idx {
                images: need_path("idx")?,
                labels: self
                    .string("dataset.labels")?
                    .map(PathBuf::from)
                    .ok_or_else(|| invalid("dataset.labels", "required for dataset.kind = idx"))?,
            },
            "cifar" => DatasetSource::Cifar { path: need_path("cifar")? },
            "csv" => DatasetSource::Csv { path: need_path("csv")? },
            other => {
                return Err(invalid(
                    "dataset.kind",
                    format!("expected synthetic, idx, cifar or csv, got `{other}`"),
                ))
            }
        };
        let mnist_like = matches!(dataset, DatasetSource::Idx { .. });

        let mut partition = d.partition.clone();
        partition.public_size = self.count("partition.public_size", partition.public_size, 2)?;
        partition.per_cluster_train =
            self.count("partition.per_cluster_train", partition.per_cluster_train, 1)?;
        partition.test_size = self.count(
            "partition.test_size",
            if mnist_like { 1200 } else { partition.test_size },
            1,
        )?;
        if let Some(rates) = self.f64_list("partition.rates")? {
            if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(invalid("partition.rates", format!("must lie in [0, 1], got {r}")));
            }
            partition.rates = rates;
        }
        partition.target_clusters = self.usize_list("partition.target_clusters")?;

        let epsilon = match self.get("ldp.epsilon") {
            None => d.epsilon,
            Some(Value::String(s)) => s
                .parse::<Epsilon>()
                .map_err(|_| invalid("ldp.epsilon", format!("must be > 0 or \"inf\", got `{s}`")))?,
            Some(v) => {
                let e = as_f64(v)
                    .ok_or_else(|| invalid("ldp.epsilon", format!("expected a number or \"inf\", got {v}")))?;
                if e == f64::INFINITY {
                    Epsilon::NoNoise
                } else {
                    Epsilon::finite(e).map_err(|_| invalid("ldp.epsilon", format!("must be > 0, got {e}")))?
                }
            }
        };
        let sensitivity = match self.string("ldp.sensitivity")?.as_deref() {
            None | Some("range") => SensitivityMode::CoordinateRange,
            Some("global_l1") => SensitivityMode::GlobalL1,
            Some(other) => {
                return Err(invalid(
                    "ldp.sensitivity",
                    format!("expected range or global_l1, got `{other}`"),
                ))
            }
        };

        let mut kmeans = d.kmeans;
        kmeans.k = self.count("cluster.k", kmeans.k, 2)?;
        kmeans.max_iter = self.count("cluster.max_iter", kmeans.max_iter, 1)?;
        kmeans.tolerance = self.non_negative("cluster.tolerance", kmeans.tolerance)?;
        let cluster_source = match self.string("cluster.source")?.as_deref() {
            None | Some("pooled") => ClusterSource::Pooled,
            Some("reference") => ClusterSource::Reference,
            Some(other) => {
                return Err(invalid(
                    "cluster.source",
                    format!("expected pooled or reference, got `{other}`"),
                ))
            }
        };

        let fraction = match self.get("policy.fraction") {
            None => None,
            Some(_) => {
                let f = self.f64("policy.fraction", 0.0)?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(invalid("policy.fraction", format!("must be in (0, 1], got {f}")));
                }
                Some(f)
            }
        };
        let policy = match (self.string("policy.kind")?.as_deref(), fraction) {
            (None, None) => d.policy,
            (None, Some(f)) => SelectionPolicy::from_fraction(f).map_err(|e| invalid("policy.fraction", e))?,
            (Some("custom"), Some(f)) => SelectionPolicy::Custom(f),
            (Some("custom"), None) => return Err(invalid("policy.fraction", "required for policy.kind = custom")),
            (Some(named @ ("strict" | "lenient")), f) => {
                let p = if named == "strict" {
                    SelectionPolicy::Strict
                } else {
                    SelectionPolicy::Lenient
                };
                if let Some(f) = f.filter(|&f| f != p.fraction()) {
                    return Err(invalid(
                        "policy.fraction",
                        format!("{f} contradicts policy.kind = {named} ({})", p.fraction()),
                    ));
                }
                p
            }
            (Some(other), _) => {
                return Err(invalid(
                    "policy.kind",
                    format!("expected strict, lenient or custom, got `{other}`"),
                ))
            }
        };

        let mu = self.non_negative("fl.mu", 0.01)?;
        let lambda = self.non_negative("fl.lambda", 0.01)?;
        let ifca_models = self.count("fl.ifca_models", 2, 1)?;
        let algorithm = match self.string("fl.algorithm")?.as_deref() {
            None | Some("fedavg") => Algorithm::FedAvg,
            Some("fedprox") => Algorithm::FedProx { mu },
            Some("feddyn") => Algorithm::FedDyn { lambda },
            Some("ifca") => Algorithm::Ifca { models: ifca_models },
            Some(other) => {
                return Err(invalid(
                    "fl.algorithm",
                    format!("expected fedavg, fedprox, feddyn or ifca, got `{other}`"),
                ))
            }
        };
        let mut local = d.local.clone();
        local.learning_rate = self.positive("fl.learning_rate", local.learning_rate)?;
        local.batch_size = self.count("fl.batch_size", if mnist_like { 16 } else { local.batch_size }, 1)?;
        local.epochs_per_round = self.count("fl.epochs", local.epochs_per_round, 1)?;
        let features = match self.string("fl.features")?.as_deref() {
            None | Some("raw") => FeatureSpace::Raw,
            Some("pca") => FeatureSpace::Pca,
            Some(other) => {
                return Err(invalid("fl.features", format!("expected raw or pca, got `{other}`")))
            }
        };
        let hidden = self.usize_list("model.hidden")?.unwrap_or_else(|| d.hidden.clone());
        if hidden.contains(&0) {
            return Err(invalid("model.hidden", "widths must be >= 1"));
        }

        let mut attack = d.attack.clone();
        attack.alpha = self.f64("attack.alpha", attack.alpha)?;
        if !(attack.alpha > 0.0 && attack.alpha < 1.0) {
            return Err(invalid("attack.alpha", format!("must be in (0, 1), got {}", attack.alpha)));
        }
        attack.rounds = self.count("attack.rounds", attack.rounds, 1)?;
        attack.sample_size = self.count("attack.sample_size", attack.sample_size, 1)?;
        if let Some(v) = self.get("attack.epsilons") {
            let Value::Array(items) = v else {
                return Err(invalid("attack.epsilons", "expected an array"));
            };
            attack.epsilons = items
                .iter()
                .map(|item| match item {
                    Value::String(s) => s
                        .parse::<Epsilon>()
                        .map_err(|_| invalid("attack.epsilons", format!("bad entry `{s}`"))),
                    other => as_f64(other)
                        .and_then(|e| Epsilon::finite(e).ok())
                        .ok_or_else(|| invalid("attack.epsilons", format!("entries must be > 0, got {other}"))),
                })
                .collect::<Result<Vec<_>>>()?;
        }

        let experiment = ExperimentConfig {
            dataset,
            partition,
            epsilon,
            sensitivity,
            pca_components: self.count("pca.components", d.pca_components, 1)?,
            kmeans,
            cluster_source,
            policy,
            algorithm,
            local,
            rounds: self.usize("fl.rounds", d.rounds)?,
            hidden,
            features,
            attack,
            seed: 0,
        };
        experiment
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(RunConfig {
            experiment,
            seed: self.u64_opt("seed")?,
            mu,
            lambda,
            ifca_models,
            repeats: self.count("grid.repeats", 3, 1)?,
        })
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn float(v: f64) -> String {
    // Debug keeps a decimal point or exponent, so TOML reads a float back
    format!("{v:?}")
}

fn quoted(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

fn float_list(values: &[f64]) -> String {
    format!("[{}]", values.iter().map(|v| float(*v)).collect::<Vec<_>>().join(", "))
}

fn int_list(values: &[usize]) -> String {
    format!("[{}]", values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))
}

fn epsilon_value(e: &Epsilon) -> String {
    match e {
        Epsilon::Finite(v) => float(*v),
        Epsilon::NoNoise => quoted("inf"),
    }
}

/// Canonical text form: every key, in schema order, one per line.
pub fn serialize(cfg: &RunConfig) -> String {
    let e = &cfg.experiment;
    let mut lines: Vec<(&str, String)> = Vec::new();
    if let Some(seed) = cfg.seed {
        lines.push(("seed", seed.to_string()));
    }
    lines.push(("dataset.kind", quoted(e.dataset.kind())));
    match &e.dataset {
        DatasetSource::Synthetic(s) => {
            lines.push(("dataset.clusters", s.n_clusters.to_string()));
            lines.push(("dataset.dim", s.dim.to_string()));
            lines.push(("dataset.samples_per_cluster", s.samples_per_cluster.to_string()));
            lines.push(("dataset.spread", float(s.spread)));
            lines.push(("dataset.classes", s.n_classes.to_string()));
        }
        DatasetSource::Idx { images, labels } => {
            lines.push(("dataset.path", quoted(&images.to_string_lossy())));
            lines.push(("dataset.labels", quoted(&labels.to_string_lossy())));
        }
        DatasetSource::Cifar { path } | DatasetSource::Csv { path } => {
            lines.push(("dataset.path", quoted(&path.to_string_lossy())));
        }
    }
    let p = &e.partition;
    lines.push(("partition.public_size", p.public_size.to_string()));
    lines.push(("partition.per_cluster_train", p.per_cluster_train.to_string()));
    lines.push(("partition.test_size", p.test_size.to_string()));
    lines.push(("partition.rates", float_list(&p.rates)));
    if let Some(t) = &p.target_clusters {
        lines.push(("partition.target_clusters", int_list(t)));
    }
    lines.push(("ldp.epsilon", epsilon_value(&e.epsilon)));
    lines.push((
        "ldp.sensitivity",
        quoted(match e.sensitivity {
            SensitivityMode::CoordinateRange => "range",
            SensitivityMode::GlobalL1 => "global_l1",
        }),
    ));
    lines.push(("pca.components", e.pca_components.to_string()));
    lines.push(("cluster.k", e.kmeans.k.to_string()));
    lines.push(("cluster.max_iter", e.kmeans.max_iter.to_string()));
    lines.push(("cluster.tolerance", float(e.kmeans.tolerance)));
    lines.push((
        "cluster.source",
        quoted(match e.cluster_source {
            ClusterSource::Pooled => "pooled",
            ClusterSource::Reference => "reference",
        }),
    ));
    match e.policy {
        SelectionPolicy::Strict => lines.push(("policy.kind", quoted("strict"))),
        SelectionPolicy::Lenient => lines.push(("policy.kind", quoted("lenient"))),
        SelectionPolicy::Custom(f) => {
            lines.push(("policy.kind", quoted("custom")));
            lines.push(("policy.fraction", float(f)));
        }
    }
    lines.push(("fl.algorithm", quoted(e.algorithm.name())));
    lines.push(("fl.mu", float(cfg.mu)));
    lines.push(("fl.lambda", float(cfg.lambda)));
    lines.push(("fl.ifca_models", cfg.ifca_models.to_string()));
    lines.push(("fl.learning_rate", float(e.local.learning_rate)));
    lines.push(("fl.batch_size", e.local.batch_size.to_string()));
    lines.push(("fl.epochs", e.local.epochs_per_round.to_string()));
    lines.push(("fl.rounds", e.rounds.to_string()));
    lines.push((
        "fl.features",
        quoted(match e.features {
            FeatureSpace::Raw => "raw",
            FeatureSpace::Pca => "pca",
        }),
    ));
    lines.push(("model.hidden", int_list(&e.hidden)));
    lines.push(("attack.alpha", float(e.attack.alpha)));
    lines.push(("attack.rounds", e.attack.rounds.to_string()));
    lines.push(("attack.sample_size", e.attack.sample_size.to_string()));
    lines.push((
        "attack.epsilons",
        format!(
            "[{}]",
            e.attack.epsilons.iter().map(epsilon_value).collect::<Vec<_>>().join(", ")
        ),
    ));
    lines.push(("grid.repeats", cfg.repeats.to_string()));

    let mut out = String::new();
    for (k, v) in lines {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

/// SHA-256 of the canonical serialization, hex encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    hex(&Sha256::digest(serialize(cfg).as_bytes()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
