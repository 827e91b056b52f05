//! Dataset ingestion (IDX, CIFAR-10 binary, synthetic blobs) and construction
//! of the target client and dissimilarity-controlled peer clients.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{dot, FeatureMatrix};
use crate::seed::{self, stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_PIXELS: usize = 3072;
pub const CIFAR_RECORD: usize = CIFAR_PIXELS + 1;

/// Feature rows with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
}

impl LabeledData {
    pub fn new(features: FeatureMatrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            pixels: self.features.row(i).to_vec(),
            label: self.labels[i],
        }
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledData {
        LabeledData {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: usize,
}

/// One participant's local data. `provenance` lists `(cluster, count)` pairs
/// describing how `train` was drawn; `train_index`/`test_index` are the pool
/// rows the samples came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: String,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub provenance: Vec<(usize, usize)>,
    pub train_index: Vec<usize>,
    pub test_index: Vec<usize>,
}

impl ClientDataset {
    pub fn train_features(&self) -> FeatureMatrix {
        samples_to_matrix(&self.train)
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::precondition(format!(
                "client {} has an empty training set",
                self.client_id
            )));
        }
        let total: usize = self.provenance.iter().map(|(_, n)| n).sum();
        if total != self.train.len() {
            return Err(Error::precondition(format!(
                "client {}: provenance sums to {total}, training set has {}",
                self.client_id,
                self.train.len()
            )));
        }
        Ok(())
    }
}

pub fn samples_to_matrix(samples: &[Sample]) -> FeatureMatrix {
    let cols = samples.first().map_or(0, |s| s.pixels.len());
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.pixels.as_slice()).collect();
    FeatureMatrix::from_rows(&rows, cols).expect("samples share one dimensionality")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub target_clusters: Vec<usize>,
    pub per_cluster_train: usize,
    pub dissimilarity_rates: Vec<f64>,
    pub test_size: usize,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.target_clusters.len() != 3 {
            return Err(Error::validation(format!(
                "target client needs 3 clusters, got {}",
                self.target_clusters.len()
            )));
        }
        let distinct: HashSet<_> = self.target_clusters.iter().collect();
        if distinct.len() != self.target_clusters.len() {
            return Err(Error::validation("target clusters must be distinct"));
        }
        if self.per_cluster_train == 0 {
            return Err(Error::validation("per_cluster_train must be positive"));
        }
        if let Some(r) = self
            .dissimilarity_rates
            .iter()
            .find(|r| !(0.0..=1.0).contains(*r))
        {
            return Err(Error::validation(format!(
                "dissimilarity rate {r} outside [0, 1]"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// IDX

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset,
            message: "header truncated".into(),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image file (magic 0x00000803). Pixels are scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<FeatureMatrix> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("expected image magic 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}"),
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let height = read_u32_be(bytes, 8)? as usize;
    let width = read_u32_be(bytes, 12)? as usize;
    let dim = height * width;
    let payload = &bytes[16..];
    let expected = count * dim;
    if payload.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: payload.len(),
        });
    }
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    FeatureMatrix::from_vec(count, dim, data)
}

/// Parses an IDX label file (magic 0x00000801).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("expected label magic 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}"),
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::LengthMismatch {
            expected: count,
            found: payload.len(),
        });
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image file and its companion label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledData> {
    let features = parse_idx_images(&read_file(images)?)?;
    let labels = parse_idx_labels(&read_file(labels)?)?;
    LabeledData::new(features, labels)
}

/// Encodes a matrix as an IDX image file of `height`x`width` images,
/// quantizing each value to `round(v * 255)`.
pub fn encode_idx_images(m: &FeatureMatrix, height: usize, width: usize) -> Result<Vec<u8>> {
    if height * width != m.cols() {
        return Err(Error::shape(format!(
            "{height}x{width} images need {} columns, matrix has {}",
            height * width,
            m.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + m.as_slice().len());
    for v in [IDX_IMAGES_MAGIC, m.rows() as u32, height as u32, width as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(
        m.as_slice()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

// ---------------------------------------------------------------------------
// CIFAR-10

/// Parses a CIFAR-10 binary batch: 3073-byte records of one label byte and
/// 3072 channel-major pixel bytes.
pub fn parse_cifar_binary(bytes: &[u8]) -> Result<LabeledData> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format {
            offset: bytes.len() - bytes.len() % CIFAR_RECORD,
            message: format!(
                "file length {} is not a multiple of the {CIFAR_RECORD}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = chunk[0];
        if label > 9 {
            return Err(Error::InvalidLabel { record, label });
        }
        labels.push(label as usize);
        data.extend(chunk[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    LabeledData::new(FeatureMatrix::from_vec(n, CIFAR_PIXELS, data)?, labels)
}

pub fn load_cifar_binary(path: &Path) -> Result<LabeledData> {
    parse_cifar_binary(&read_file(path)?)
}

// ---------------------------------------------------------------------------
// Synthetic blobs

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_clusters: usize,
    pub dim: usize,
    pub samples_per_cluster: usize,
    pub spread: f64,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_clusters: 15,
            dim: 64,
            samples_per_cluster: 1500,
            spread: 0.1,
            n_classes: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub data: LabeledData,
    /// Generating blob of each row.
    pub clusters: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Isotropic Gaussian blobs. Centers are unit vectors, mutually orthogonal
/// when `dim >= n_clusters`, so every pair of centers sits at distance sqrt(2).
///
/// Each blob is split by a random hyperplane through its center into two
/// classes, `2c mod n_classes` and `(2c + 1) mod n_classes`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n_clusters < 2 || spec.dim < 2 || spec.samples_per_cluster == 0 {
        return Err(Error::validation(
            "synthetic data needs n_clusters >= 2, dim >= 2 and samples_per_cluster >= 1",
        ));
    }
    if !(spec.spread > 0.0 && spec.spread.is_finite()) {
        return Err(Error::validation(format!(
            "spread must be positive, got {}",
            spec.spread
        )));
    }
    if spec.n_classes < 2 {
        return Err(Error::validation("synthetic data needs at least 2 classes"));
    }
    let mut rng = seed::derived_rng(spec.seed, &[stream::SYNTHETIC]);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.n_clusters);
    for _ in 0..spec.n_clusters {
        let mut v = gaussian_vec(&mut rng, spec.dim);
        if centers.len() < spec.dim {
            for c in &centers {
                let p = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        normalize(&mut v);
        centers.push(v);
    }
    let splits: Vec<Vec<f64>> = (0..spec.n_clusters)
        .map(|_| {
            let mut u = gaussian_vec(&mut rng, spec.dim);
            normalize(&mut u);
            u
        })
        .collect();

    let n = spec.n_clusters * spec.samples_per_cluster;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut clusters = Vec::with_capacity(n);
    for (c, (center, split)) in centers.iter().zip(&splits).enumerate() {
        for _ in 0..spec.samples_per_cluster {
            let z = gaussian_vec(&mut rng, spec.dim);
            let side = usize::from(dot(&z, split) > 0.0);
            labels.push((2 * c + side) % spec.n_classes);
            clusters.push(c);
            data.extend(center.iter().zip(&z).map(|(m, e)| m + spec.spread * e));
        }
    }
    Ok(SyntheticData {
        data: LabeledData::new(FeatureMatrix::from_vec(n, spec.dim, data)?, labels)?,
        clusters,
        centers,
    })
}

/// CSV with header `label,c0,c1,...`.
pub fn labeled_to_csv(data: &LabeledData) -> String {
    let mut out = String::from("label");
    for j in 0..data.dim() {
        let _ = write!(out, ",c{j}");
    }
    out.push('\n');
    for (row, label) in data.features.iter_rows().zip(&data.labels) {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn labeled_from_csv(text: &str) -> Result<LabeledData> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Format {
        offset: 0,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"label") {
        return Err(Error::Format {
            offset: 0,
            message: "header must start with `label`".into(),
        });
    }
    let dim = cols.len() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut offset = header.len() + 1;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            offset += line.len() + 1;
            continue;
        }
        let bad = |message: String| Error::Format { offset, message };
        let mut fields = line.split(',');
        let label = fields
            .next()
            .unwrap_or_default()
            .parse::<usize>()
            .map_err(|e| bad(format!("line {}: label: {e}", line_no + 1)))?;
        let before = data.len();
        for f in fields {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", line_no + 1)))?,
            );
        }
        if data.len() - before != dim {
            return Err(bad(format!(
                "line {} has {} values, header has {dim}",
                line_no + 1,
                data.len() - before
            )));
        }
        labels.push(label);
        offset += line.len() + 1;
    }
    LabeledData::new(FeatureMatrix::from_vec(labels.len(), dim, data)?, labels)
}

// ---------------------------------------------------------------------------
// Client construction

/// Pool rows grouped by cluster id, each list ascending.
pub fn cluster_members(assignments: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in assignments.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    members
}

fn check_pool(pool: &LabeledData, assignments: &[usize]) -> Result<()> {
    if pool.len() != assignments.len() {
        return Err(Error::shape(format!(
            "{} pool rows but {} cluster assignments",
            pool.len(),
            assignments.len()
        )));
    }
    Ok(())
}

fn shuffled(members: &[usize], rng: &mut impl Rng) -> Vec<usize> {
    let mut v = members.to_vec();
    v.shuffle(rng);
    v
}

/// Number of samples a peer keeps from each target cluster at rate `r`.
pub fn kept_per_cluster(per_cluster_train: usize, r: f64) -> usize {
    // the slack absorbs representation error such as (1 - 0.9) * 400 = 39.999...
    ((1.0 - r) * per_cluster_train as f64 + 1e-9).floor() as usize
}

/// Builds the target client: `per_cluster_train` samples from each of the
/// three target clusters, and a disjoint test set drawn from the same
/// clusters in the training proportions.
pub fn build_target_client(
    pool: &LabeledData,
    assignments: &[usize],
    plan: &PartitionPlan,
) -> Result<ClientDataset> {
    plan.validate()?;
    check_pool(pool, assignments)?;
    let members = cluster_members(assignments);
    let mut rng = seed::derived_rng(plan.seed, &[stream::TARGET_CLIENT]);

    let k = plan.target_clusters.len();
    let test_counts: Vec<usize> = (0..k)
        .map(|i| plan.test_size / k + usize::from(i < plan.test_size % k))
        .collect();

    let mut train_index = Vec::new();
    let mut test_index = Vec::new();
    let mut provenance = Vec::new();
    for (&c, &n_test) in plan.target_clusters.iter().zip(&test_counts) {
        let rows = members.get(&c).map(Vec::as_slice).unwrap_or(&[]);
        let required = plan.per_cluster_train + n_test;
        if rows.len() < required {
            return Err(Error::Capacity {
                cluster: c,
                available: rows.len(),
                required,
            });
        }
        let order = shuffled(rows, &mut rng);
        train_index.extend_from_slice(&order[..plan.per_cluster_train]);
        test_index.extend_from_slice(&order[plan.per_cluster_train..required]);
        provenance.push((c, plan.per_cluster_train));
    }
    let client = ClientDataset {
        client_id: "T".into(),
        train: train_index.iter().map(|&i| pool.sample(i)).collect(),
        test: test_index.iter().map(|&i| pool.sample(i)).collect(),
        provenance,
        train_index,
        test_index,
    };
    client.check_invariants()?;
    Ok(client)
}

/// Draws `count` rows of `cluster`, preferring rows outside `avoid`.
fn draw_from_cluster(
    members: &BTreeMap<usize, Vec<usize>>,
    cluster: usize,
    count: usize,
    avoid: &HashSet<usize>,
    rng: &mut impl Rng,
    client_id: &str,
) -> Result<Vec<usize>> {
    let rows = members.get(&cluster).map(Vec::as_slice).unwrap_or(&[]);
    if rows.len() < count {
        return Err(Error::Capacity {
            cluster,
            available: rows.len(),
            required: count,
        });
    }
    let fresh: Vec<usize> = rows.iter().copied().filter(|i| !avoid.contains(i)).collect();
    if fresh.len() >= count {
        let mut order = shuffled(&fresh, rng);
        order.truncate(count);
        Ok(order)
    } else {
        warn!(
            "client {client_id}: cluster {cluster} has {} rows unused by the target, \
             {count} needed; reusing target rows",
            fresh.len()
        );
        let mut order = shuffled(&fresh, rng);
        let reused: Vec<usize> = rows.iter().copied().filter(|i| avoid.contains(i)).collect();
        order.extend(shuffled(&reused, rng).into_iter().take(count - fresh.len()));
        Ok(order)
    }
}

/// Builds a peer client at dissimilarity rate `r`: `floor((1 - r) * per_cluster_train)`
/// samples from each target cluster, and the remainder of the
/// `3 * per_cluster_train` budget from one randomly chosen cluster outside
/// the target clusters. At `r = 1` the budget is spread evenly over every
/// non-target cluster.
pub fn build_peer_client(
    pool: &LabeledData,
    assignments: &[usize],
    plan: &PartitionPlan,
    r: f64,
    seed: u64,
    target: &ClientDataset,
    client_id: &str,
) -> Result<ClientDataset> {
    plan.validate()?;
    check_pool(pool, assignments)?;
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::validation(format!("dissimilarity rate {r} outside [0, 1]")));
    }
    let members = cluster_members(assignments);
    let mut rng = seed::derived_rng(seed, &[stream::PEER_CLIENT]);
    let avoid: HashSet<usize> = target
        .train_index
        .iter()
        .chain(&target.test_index)
        .copied()
        .collect();

    let per = plan.per_cluster_train;
    let keep = kept_per_cluster(per, r);
    let budget = plan.target_clusters.len() * (per - keep);
    let outside: Vec<usize> = members
        .keys()
        .copied()
        .filter(|c| !plan.target_clusters.contains(c))
        .collect();

    let mut train_index = Vec::with_capacity(plan.target_clusters.len() * per);
    let mut provenance = Vec::new();
    for &c in &plan.target_clusters {
        train_index.extend(draw_from_cluster(&members, c, keep, &avoid, &mut rng, client_id)?);
        provenance.push((c, keep));
    }

    if outside.is_empty() {
        if budget > 0 {
            return Err(Error::precondition(
                "no cluster outside the target clusters to draw dissimilar samples from",
            ));
        }
    } else if r >= 1.0 {
        let mut order = outside.clone();
        order.shuffle(&mut rng);
        let share = budget / order.len();
        let extra = budget % order.len();
        let mut counts: Vec<(usize, usize)> = order
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, share + usize::from(i < extra)))
            .collect();
        counts.sort_unstable();
        for (c, n) in counts {
            train_index.extend(draw_from_cluster(&members, c, n, &avoid, &mut rng, client_id)?);
            provenance.push((c, n));
        }
    } else {
        let eligible: Vec<usize> = outside
            .iter()
            .copied()
            .filter(|c| members[c].len() >= budget)
            .collect();
        let Some(&c_diff) = eligible.choose(&mut rng) else {
            let (&cluster, rows) = outside
                .iter()
                .map(|c| (c, &members[c]))
                .max_by_key(|(_, rows)| rows.len())
                .expect("outside is non-empty");
            return Err(Error::Capacity {
                cluster,
                available: rows.len(),
                required: budget,
            });
        };
        train_index.extend(draw_from_cluster(
            &members, c_diff, budget, &avoid, &mut rng, client_id,
        )?);
        provenance.push((c_diff, budget));
    }

    let client = ClientDataset {
        client_id: client_id.to_string(),
        train: train_index.iter().map(|&i| pool.sample(i)).collect(),
        test: Vec::new(),
        provenance,
        train_index,
        test_index: Vec::new(),
    };
    client.check_invariants()?;
    Ok(client)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, declared: u32, fill: u8) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, declared, 28, 28] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend(std::iter::repeat_n(fill, count as usize * 784));
        b
    }

    #[test]
    fn idx_zero_images() {
        let m = parse_idx_images(&idx_images(4, 4, 0)).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 784));
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idx_truncated_payload() {
        let err = parse_idx_images(&idx_images(9, 10, 0)).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 7840, found: 7056 }));
    }

    #[test]
    fn idx_pixel_scaling() {
        let mut b = idx_images(1, 1, 0);
        b[16] = 255;
        let m = parse_idx_images(&b).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn idx_bad_magic_names_offset() {
        let mut b = idx_images(1, 1, 0);
        b[3] = 0x01;
        match parse_idx_images(&b).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            e => panic!("unexpected {e}"),
        }
        match parse_idx_images(&b[..6]).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            e => panic!("unexpected {e}"),
        }
        let good = idx_images(1, 1, 0);
        match parse_idx_images(&good[..10]).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 8),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn idx_labels() {
        let labels = parse_idx_labels(&encode_idx_labels(&[3, 1, 4])).unwrap();
        assert_eq!(labels, vec![3, 1, 4]);
        let mut b = encode_idx_labels(&[3, 1, 4]);
        b.pop();
        assert!(matches!(
            parse_idx_labels(&b).unwrap_err(),
            Error::LengthMismatch { expected: 3, found: 2 }
        ));
    }

    #[test]
    fn cifar_records() {
        let empty = parse_cifar_binary(&[]).unwrap();
        assert_eq!((empty.features.rows(), empty.features.cols()), (0, 3072));
        assert!(empty.labels.is_empty());

        let mut one = vec![0u8; CIFAR_RECORD];
        one[0] = 3;
        let d = parse_cifar_binary(&one).unwrap();
        assert_eq!(d.labels, vec![3]);
        assert!(d.features.row(0).iter().all(|&v| v == 0.0));

        assert!(matches!(
            parse_cifar_binary(&[0u8; 3074]).unwrap_err(),
            Error::Format { .. }
        ));
        one[0] = 10;
        assert!(matches!(
            parse_cifar_binary(&one).unwrap_err(),
            Error::InvalidLabel { record: 0, label: 10 }
        ));
    }

    fn spec(n_clusters: usize, dim: usize, per: usize, spread: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_clusters,
            dim,
            samples_per_cluster: per,
            spread,
            n_classes: 10,
            seed: 42,
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&spec(4, 8, 20, 0.3)).unwrap();
        let b = generate_synthetic(&spec(4, 8, 20, 0.3)).unwrap();
        assert_eq!(a, b);
        let bits = |d: &SyntheticData| -> Vec<u64> {
            d.data.features.as_slice().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn synthetic_fifteen_clusters_all_populated() {
        let d = generate_synthetic(&spec(15, 50, 10, 0.1)).unwrap();
        let members = cluster_members(&d.clusters);
        assert_eq!(members.len(), 15);
        assert!(members.values().all(|m| m.len() == 10));
    }

    #[test]
    fn synthetic_centers_are_orthonormal() {
        let d = generate_synthetic(&spec(5, 8, 2, 0.1)).unwrap();
        for (i, a) in d.centers.iter().enumerate() {
            for (j, b) in d.centers.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_rejects_bad_spec() {
        assert!(generate_synthetic(&spec(1, 8, 2, 0.1)).is_err());
        assert!(generate_synthetic(&spec(3, 8, 2, 0.0)).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let d = generate_synthetic(&spec(3, 4, 5, 0.5)).unwrap();
        let text = labeled_to_csv(&d.data);
        assert!(text.starts_with("label,c0,c1,c2,c3\n"));
        assert_eq!(labeled_from_csv(&text).unwrap(), d.data);
    }

    fn pool(per: usize) -> SyntheticData {
        generate_synthetic(&spec(6, 8, per, 0.1)).unwrap()
    }

    fn plan(per: usize, test: usize) -> PartitionPlan {
        PartitionPlan {
            target_clusters: vec![0, 2, 4],
            per_cluster_train: per,
            dissimilarity_rates: vec![0.0, 0.5, 1.0],
            test_size: test,
            seed: 9,
        }
    }

    #[test]
    fn target_client_sizes() {
        let p = pool(800);
        let t = build_target_client(&p.data, &p.clusters, &plan(400, 300)).unwrap();
        assert_eq!(t.train.len(), 1200);
        assert_eq!(t.provenance, vec![(0, 400), (2, 400), (4, 400)]);
        assert_eq!(t.test.len(), 300);
        for c in [0, 2, 4] {
            let n = t.test_index.iter().filter(|&&i| p.clusters[i] == c).count();
            assert_eq!(n, 100);
        }
        let train: HashSet<_> = t.train_index.iter().collect();
        assert!(t.test_index.iter().all(|i| !train.contains(i)));
    }

    #[test]
    fn target_client_capacity_error() {
        let p = pool(10);
        match build_target_client(&p.data, &p.clusters, &plan(400, 300)).unwrap_err() {
            Error::Capacity { cluster, .. } => assert_eq!(cluster, 0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn plan_validation() {
        let mut bad = plan(10, 3);
        bad.target_clusters = vec![0, 0, 1];
        assert!(bad.validate().is_err());
        let mut bad = plan(10, 3);
        bad.dissimilarity_rates = vec![1.5];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn peer_client_rates() {
        let p = pool(1400);
        let pl = plan(400, 300);
        let t = build_target_client(&p.data, &p.clusters, &pl).unwrap();

        let same = build_peer_client(&p.data, &p.clusters, &pl, 0.0, 1, &t, "P0").unwrap();
        assert_eq!(same.train.len(), 1200);
        assert_eq!(same.provenance.len(), 4);
        assert_eq!(same.provenance[3].1, 0);
        assert!(same.train_index.iter().all(|i| [0, 2, 4].contains(&p.clusters[*i])));

        let half = build_peer_client(&p.data, &p.clusters, &pl, 0.5, 2, &t, "P5").unwrap();
        assert_eq!(&half.provenance[..3], &[(0, 200), (2, 200), (4, 200)]);
        assert_eq!(half.provenance[3].1, 600);
        assert!(![0, 2, 4].contains(&half.provenance[3].0));
        assert_eq!(half.train.len(), 1200);

        let far = build_peer_client(&p.data, &p.clusters, &pl, 1.0, 3, &t, "P10").unwrap();
        assert_eq!(far.train.len(), 1200);
        assert!(far.train_index.iter().all(|i| ![0, 2, 4].contains(&p.clusters[*i])));
        let used: Vec<usize> = far.provenance.iter().filter(|(_, n)| *n > 0).map(|(c, _)| *c).collect();
        assert_eq!(used, vec![1, 3, 5]);

        let t_rows: HashSet<_> = t.train_index.iter().chain(&t.test_index).collect();
        for peer in [&same, &half, &far] {
            assert!(peer.train_index.iter().all(|i| !t_rows.contains(i)));
            let own: HashSet<_> = peer.train_index.iter().collect();
            assert_eq!(own.len(), peer.train_index.len());
        }
    }

    #[test]
    fn peer_size_is_rate_invariant() {
        let p = pool(1400);
        let pl = plan(400, 300);
        let t = build_target_client(&p.data, &p.clusters, &pl).unwrap();
        for step in 0..=10 {
            let r = f64::from(step) / 10.0;
            let c = build_peer_client(&p.data, &p.clusters, &pl, r, step as u64, &t, "P").unwrap();
            assert_eq!(c.train.len(), 1200, "r = {r}");
            c.check_invariants().unwrap();
        }
        assert_eq!(kept_per_cluster(400, 0.9), 40);
        assert_eq!(kept_per_cluster(400, 0.7), 120);
    }

    #[test]
    fn peer_reuses_target_rows_only_when_needed() {
        let p = pool(700);
        let pl = plan(400, 0);
        let t = build_target_client(&p.data, &p.clusters, &pl).unwrap();
        // 300 fresh rows per target cluster, 400 needed
        let c = build_peer_client(&p.data, &p.clusters, &pl, 0.0, 5, &t, "P").unwrap();
        let own: HashSet<_> = c.train_index.iter().collect();
        assert_eq!(own.len(), 1200);
        let overlap = c.train_index.iter().filter(|i| t.train_index.contains(i)).count();
        assert_eq!(overlap, 300);
    }

    #[test]
    fn construction_is_deterministic() {
        let p = pool(900);
        let pl = plan(200, 60);
        let t1 = build_target_client(&p.data, &p.clusters, &pl).unwrap();
        let t2 = build_target_client(&p.data, &p.clusters, &pl).unwrap();
        assert_eq!(t1, t2);
        let a = build_peer_client(&p.data, &p.clusters, &pl, 0.3, 11, &t1, "P").unwrap();
        let b = build_peer_client(&p.data, &p.clusters, &pl, 0.3, 11, &t1, "P").unwrap();
        assert_eq!(a, b);
    }
}
