//! Principal component analysis: the shared projection every client applies
//! before its features leave the device.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal basis vectors, eigenvalue-descending.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Set when fewer than `n_components` eigenvalues are nonzero; the surplus
    /// components complete the basis and carry a ratio of 0.
    pub rank_deficient: bool,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

/// Full eigendecomposition of the sample covariance (1/(n-1) estimator).
/// Returns eigenpairs sorted by descending eigenvalue, with each vector
/// flipped so that its largest-magnitude coordinate is positive.
fn covariance_eigen(data: &FeatureMatrix) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = (data.rows(), data.cols());
    let mean = data.column_means();
    let mut centered = DMatrix::from_row_slice(n, d, data.as_slice());
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = centered.transpose() * &centered;
    cov /= (n - 1) as f64;
    // symmetrize away round-off before the symmetric solver
    let cov = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            apply_sign_convention(&mut v);
            v
        })
        .collect();
    (mean, values, vectors)
}

pub(crate) fn apply_sign_convention(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn zero_tolerance(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0_f64, f64::max);
    max * values.len() as f64 * 1e-12
}

pub fn pca_fit(public_data: &FeatureMatrix, n_components: usize) -> Result<PcaModel> {
    let (n, d) = (public_data.rows(), public_data.cols());
    if n_components == 0 || n_components > d {
        return Err(Error::precondition(format!(
            "n_components must be in 1..={d}, got {n_components}"
        )));
    }
    if n <= n_components {
        return Err(Error::precondition(format!(
            "PCA with {n_components} components needs more than {n_components} rows, got {n}"
        )));
    }
    let (mean, values, vectors) = covariance_eigen(public_data);
    let tol = zero_tolerance(&values);
    let clean: Vec<f64> = values.iter().map(|&v| if v > tol { v } else { 0.0 }).collect();
    let total: f64 = clean.iter().sum();
    let rank_deficient = clean[n_components - 1] == 0.0;
    if rank_deficient {
        warn!(
            "PCA input has rank {} < {n_components}; surplus components complete the basis",
            clean.iter().filter(|&&v| v > 0.0).count()
        );
    }
    let explained_variance: Vec<f64> = clean[..n_components].to_vec();
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|&v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaModel {
        mean,
        components: vectors.into_iter().take(n_components).collect(),
        explained_variance,
        explained_variance_ratio,
        rank_deficient,
    })
}

/// Projects rows onto the model basis: `(x - mean) . component` per column.
pub fn pca_project(model: &PcaModel, data: &FeatureMatrix) -> Result<FeatureMatrix> {
    if data.cols() != model.dim() {
        return Err(Error::shape(format!(
            "data has {} columns, PCA model expects {}",
            data.cols(),
            model.dim()
        )));
    }
    let k = model.n_components();
    let mut out = FeatureMatrix::zeros(data.rows(), k);
    if k == 0 {
        return Ok(out);
    }
    out.as_mut_slice()
        .par_chunks_mut(k)
        .zip(data.as_slice().par_chunks(model.dim().max(1)))
        .for_each_init(
            || vec![0.0; model.dim()],
            |centered, (dst, row)| {
                for ((c, x), m) in centered.iter_mut().zip(row).zip(&model.mean) {
                    *c = x - m;
                }
                for (o, comp) in dst.iter_mut().zip(&model.components) {
                    *o = crate::matrix::dot(centered, comp);
                }
            },
        );
    Ok(out)
}

/// Maps scores back to the input space: `mean + sum_k score_k * component_k`.
pub fn pca_reconstruct(model: &PcaModel, scores: &FeatureMatrix) -> Result<FeatureMatrix> {
    if scores.cols() != model.n_components() {
        return Err(Error::shape(format!(
            "scores have {} columns, model has {} components",
            scores.cols(),
            model.n_components()
        )));
    }
    let mut out = FeatureMatrix::zeros(scores.rows(), model.dim());
    for i in 0..scores.rows() {
        let dst = out.row_mut(i);
        dst.copy_from_slice(&model.mean);
        for (s, comp) in scores.row(i).iter().zip(&model.components) {
            for (o, c) in dst.iter_mut().zip(comp) {
                *o += s * c;
            }
        }
    }
    Ok(out)
}

/// Cumulative explained variance at each candidate component count. No
/// selection is made; the table is meant for a human or a config file.
pub fn elbow_scan(data: &FeatureMatrix, candidates: &[usize]) -> Result<Vec<(usize, f64)>> {
    if data.rows() < 2 || data.cols() == 0 {
        return Err(Error::precondition("elbow scan needs at least 2 rows"));
    }
    let (_, values, _) = covariance_eigen(data);
    let tol = zero_tolerance(&values);
    let clean: Vec<f64> = values.iter().map(|&v| if v > tol { v } else { 0.0 }).collect();
    let total: f64 = clean.iter().sum();
    let mut cumulative = Vec::with_capacity(clean.len() + 1);
    cumulative.push(0.0);
    let mut acc = 0.0;
    for v in &clean {
        acc += v;
        cumulative.push(if total > 0.0 { (acc / total).min(1.0) } else { 0.0 });
    }
    let mut ks = candidates.to_vec();
    ks.sort_unstable();
    Ok(ks
        .into_iter()
        .map(|k| (k, cumulative[k.min(clean.len())]))
        .collect())
}

// ---------------------------------------------------------------------------
// CSV bundle

fn csv_row(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

fn header(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

pub const PCA_MANIFEST: &str = "pca_manifest.txt";
pub const PCA_MEAN: &str = "pca_mean.csv";
pub const PCA_COMPONENTS: &str = "pca_components.csv";
pub const PCA_RATIO: &str = "pca_ratio.csv";

/// Writes the model as three CSV files plus a manifest. Floats use the
/// shortest representation that reads back to the same value.
pub fn write_pca_bundle(model: &PcaModel, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let d = model.dim();
    let k = model.n_components();
    let files = [
        (PCA_MEAN, format!("{}\n{}\n", header("c", d), csv_row(&model.mean))),
        (PCA_COMPONENTS, {
            let mut s = header("c", d) + "\n";
            for c in &model.components {
                s += &csv_row(c);
                s.push('\n');
            }
            s
        }),
        (
            PCA_RATIO,
            format!(
                "{}\n{}\n{}\n",
                header("pc", k),
                csv_row(&model.explained_variance_ratio),
                csv_row(&model.explained_variance)
            ),
        ),
        (
            PCA_MANIFEST,
            format!(
                "dim = {d}\nn_components = {k}\nrank_deficient = {}\nfiles = {PCA_MEAN},{PCA_COMPONENTS},{PCA_RATIO}\n",
                model.rank_deficient
            ),
        ),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn parse_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut offset = 0;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i > 0 && !line.is_empty() {
            let row = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format {
                    offset,
                    message: format!("{}: {e}", path.display()),
                })?;
            rows.push(row);
        }
        offset += line.len() + 1;
    }
    Ok(rows)
}

pub fn read_pca_bundle(dir: &Path) -> Result<PcaModel> {
    let manifest_path = dir.join(PCA_MANIFEST);
    let manifest =
        std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let rank_deficient = manifest
        .lines()
        .any(|l| l.replace(' ', "") == "rank_deficient=true");
    let mean = parse_rows(&dir.join(PCA_MEAN))?
        .pop()
        .ok_or_else(|| Error::precondition("empty PCA mean file"))?;
    let components = parse_rows(&dir.join(PCA_COMPONENTS))?;
    let mut ratio_rows = parse_rows(&dir.join(PCA_RATIO))?.into_iter();
    let explained_variance_ratio = ratio_rows.next().unwrap_or_default();
    let explained_variance = ratio_rows.next().unwrap_or_default();
    if components.iter().any(|c| c.len() != mean.len())
        || explained_variance_ratio.len() != components.len()
    {
        return Err(Error::shape("inconsistent PCA bundle"));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
        rank_deficient,
    })
}
