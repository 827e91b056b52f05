//! Local differential privacy for projected features and the Euclidean
//! distance membership-inference attack used to audit it.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::distributions::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, FeatureMatrix};
use crate::seed::{self, stream};

/// Privacy budget. The unbounded case is a separate variant rather than an
/// infinite float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Finite(f64),
    NoNoise,
}

impl Epsilon {
    pub fn finite(eps: f64) -> Result<Self> {
        if eps.is_finite() && eps > 0.0 {
            Ok(Epsilon::Finite(eps))
        } else {
            Err(Error::validation(format!(
                "epsilon must be finite and > 0, got {eps}"
            )))
        }
    }

    /// Laplace scale for sensitivity `s`, or `None` when no noise is added.
    pub fn scale(&self, s: f64) -> Option<f64> {
        match self {
            Epsilon::Finite(e) => Some(s / e),
            Epsilon::NoNoise => None,
        }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Finite(e) => write!(f, "{e}"),
            Epsilon::NoNoise => f.write_str("inf"),
        }
    }
}

impl FromStr for Epsilon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "none" | "off" => Ok(Epsilon::NoNoise),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::validation(format!("cannot parse epsilon `{other}`")))?;
                Epsilon::finite(v)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpConfig {
    pub epsilon: Epsilon,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityVector(Vec<f64>);

impl SensitivityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((j, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::validation(format!(
                "sensitivity[{j}] = {v} is not a finite non-negative value"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensitivityMode {
    /// Per-coordinate range `max - min`.
    #[default]
    CoordinateRange,
    /// Largest l1 distance between any two rows, applied to every coordinate.
    GlobalL1,
}

/// Coordinate-wise l1 sensitivity: `s_j = max_i x_ij - min_i x_ij`.
pub fn sensitivity_l1(features: &FeatureMatrix) -> Result<SensitivityVector> {
    if features.is_empty() {
        return Err(Error::precondition("sensitivity of an empty matrix"));
    }
    let mut lo = features.row(0).to_vec();
    let mut hi = lo.clone();
    for row in features.iter_rows().skip(1) {
        for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(row) {
            *l = l.min(v);
            *h = h.max(v);
        }
    }
    SensitivityVector::new(hi.iter().zip(&lo).map(|(h, l)| h - l).collect())
}

/// `max_{x, x'} ||x - x'||_1` over all row pairs, broadcast to every coordinate.
pub fn sensitivity_global_l1(features: &FeatureMatrix) -> Result<SensitivityVector> {
    if features.is_empty() {
        return Err(Error::precondition("sensitivity of an empty matrix"));
    }
    let n = features.rows();
    let diameter = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = features.row(i);
            (i + 1..n)
                .map(|k| {
                    a.iter()
                        .zip(features.row(k))
                        .map(|(x, y)| (x - y).abs())
                        .sum::<f64>()
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    SensitivityVector::new(vec![diameter; features.cols()])
}

pub fn sensitivity(features: &FeatureMatrix, mode: SensitivityMode) -> Result<SensitivityVector> {
    match mode {
        SensitivityMode::CoordinateRange => sensitivity_l1(features),
        SensitivityMode::GlobalL1 => sensitivity_global_l1(features),
    }
}

/// One Laplace(0, scale) draw by inverse CDF.
pub fn sample_laplace(rng: &mut impl Rng, scale: f64) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Perturbs every entry with independent Laplace(0, s_j / epsilon) noise.
/// One uniform is consumed per entry regardless of `s_j`, so the noise on a
/// coordinate does not depend on the other coordinates' sensitivities.
pub fn add_laplace_noise(
    features: &FeatureMatrix,
    sens: &SensitivityVector,
    cfg: &LdpConfig,
) -> Result<FeatureMatrix> {
    if sens.len() != features.cols() {
        return Err(Error::shape(format!(
            "sensitivity has {} entries, features have {} columns",
            sens.len(),
            features.cols()
        )));
    }
    let mut out = features.clone();
    let Epsilon::Finite(_) = cfg.epsilon else {
        return Ok(out);
    };
    let scales: Vec<f64> = sens
        .values()
        .iter()
        .map(|&s| cfg.epsilon.scale(s).unwrap_or(0.0))
        .collect();
    let mut rng = seed::rng(cfg.seed);
    let cols = features.cols();
    for (idx, v) in out.as_mut_slice().iter_mut().enumerate() {
        let b = scales[idx % cols];
        let eta = sample_laplace(&mut rng, b);
        if b > 0.0 {
            *v += eta;
        }
    }
    Ok(out)
}

/// Client-side privatization: sensitivity on the client's own projected
/// features, then Laplace noise from the stream `(base_seed, client, round)`.
pub fn privatize(
    features: &FeatureMatrix,
    epsilon: Epsilon,
    mode: SensitivityMode,
    base_seed: u64,
    client: u64,
    round: u64,
) -> Result<FeatureMatrix> {
    if let Epsilon::NoNoise = epsilon {
        return Ok(features.clone());
    }
    let sens = sensitivity(features, mode)?;
    let cfg = LdpConfig {
        epsilon,
        seed: seed::derive(base_seed, &[stream::CLIENT_LDP, client, round]),
    };
    add_laplace_noise(features, &sens, &cfg)
}

// ---------------------------------------------------------------------------
// Membership inference

/// Outcome of one attack round.
#[derive(Debug, Clone, PartialEq)]
pub struct MiaRound {
    pub power: f64,
    pub fpr: f64,
    pub gamma: f64,
    /// Minimum distance from each member (case) to the release.
    pub case_distances: Vec<f64>,
    /// Minimum distance from each non-member (control) to the release.
    pub control_distances: Vec<f64>,
}

fn nearest_distances(queries: &FeatureMatrix, release: &FeatureMatrix) -> Vec<f64> {
    (0..queries.rows())
        .into_par_iter()
        .map(|i| {
            let q = queries.row(i);
            release
                .iter_rows()
                .map(|r| squared_distance(q, r))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Scores a release: gamma is the `ceil(alpha * m)`-th smallest control
/// distance, and a point is declared a member when its distance is `<= gamma`.
pub fn score_release(
    release: &FeatureMatrix,
    cases: &FeatureMatrix,
    controls: &FeatureMatrix,
    alpha: f64,
) -> Result<MiaRound> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if release.is_empty() || cases.is_empty() || controls.is_empty() {
        return Err(Error::precondition("attack needs a release, cases and controls"));
    }
    let case_distances = nearest_distances(cases, release);
    let control_distances = nearest_distances(controls, release);
    let mut sorted = control_distances.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let rank = ((alpha * m as f64).ceil() as usize).clamp(1, m);
    let gamma = sorted[rank - 1];
    let frac = |d: &[f64]| d.iter().filter(|&&x| x <= gamma).count() as f64 / d.len() as f64;
    Ok(MiaRound {
        power: frac(&case_distances),
        fpr: frac(&control_distances),
        gamma,
        case_distances,
        control_distances,
    })
}

/// One round of the split-and-perturb attack. `X` is split into two equal
/// halves; the reference half is perturbed with coordinate-wise Laplace
/// noise calibrated on itself. Up to `n` cases are drawn from the reference
/// half (members) and as many controls from the held-out half (non-members).
pub fn mia_round(
    x: &FeatureMatrix,
    n: usize,
    alpha: f64,
    epsilon: Epsilon,
    round_seed: u64,
) -> Result<MiaRound> {
    if x.rows() < 4 {
        return Err(Error::precondition(format!(
            "attack needs at least 4 rows, got {}",
            x.rows()
        )));
    }
    if n == 0 {
        return Err(Error::precondition("attack sample size must be >= 1"));
    }
    let mut rng = seed::rng(round_seed);
    let mut perm: Vec<usize> = (0..x.rows()).collect();
    perm.shuffle(&mut rng);
    let half = x.rows() / 2;
    let reference = &perm[..half];
    let held_out = &perm[half..2 * half];
    if n > half {
        warn!("attack sample size {n} exceeds half size {half}; clamped");
    }
    let m = n.min(half);
    let cases: Vec<usize> = reference.choose_multiple(&mut rng, m).copied().collect();
    let controls: Vec<usize> = held_out.choose_multiple(&mut rng, m).copied().collect();

    let reference_rows = x.select_rows(reference);
    let sens = sensitivity_l1(&reference_rows)?;
    let cfg = LdpConfig {
        epsilon,
        seed: rng.gen(),
    };
    let release = add_laplace_noise(&reference_rows, &sens, &cfg)?;
    score_release(&release, &x.select_rows(&cases), &x.select_rows(&controls), alpha)
}

/// Attack against a one-shot client release (the release a client sends to
/// the server once), as opposed to [`mia_round`], which re-noises per round.
/// Cases are sampled from `members`, whose rows produced `release`; controls
/// from `non_members`.
pub fn mia_against_release(
    members: &FeatureMatrix,
    release: &FeatureMatrix,
    non_members: &FeatureMatrix,
    n: usize,
    alpha: f64,
    round_seed: u64,
) -> Result<MiaRound> {
    if members.rows() != release.rows() {
        return Err(Error::shape("release must have one row per member"));
    }
    let mut rng = seed::rng(round_seed);
    let m = n.min(members.rows()).min(non_members.rows());
    if m == 0 {
        return Err(Error::precondition("attack needs members and non-members"));
    }
    let cases: Vec<usize> = (0..members.rows())
        .collect::<Vec<_>>()
        .choose_multiple(&mut rng, m)
        .copied()
        .collect();
    let controls: Vec<usize> = (0..non_members.rows())
        .collect::<Vec<_>>()
        .choose_multiple(&mut rng, m)
        .copied()
        .collect();
    score_release(
        release,
        &members.select_rows(&cases),
        &non_members.select_rows(&controls),
        alpha,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub epsilon: Epsilon,
    pub rounds: usize,
    pub alpha: f64,
    pub power_mean: f64,
    pub power_std: f64,
    pub fpr_realized: f64,
    pub raw: Vec<MiaRound>,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seed of attack round `round`; shared across budgets so that every budget
/// sees the same splits and the same underlying uniforms.
pub fn attack_round_seed(seed: u64, round: usize) -> u64 {
    seed::derive(seed, &[stream::ATTACK, round as u64])
}

pub fn mia_power_curve(
    x: &FeatureMatrix,
    n: usize,
    alpha: f64,
    epsilons: &[Epsilon],
    rounds: usize,
    seed: u64,
) -> Result<Vec<AttackReport>> {
    if rounds == 0 {
        return Err(Error::precondition("attack needs at least one round"));
    }
    epsilons
        .iter()
        .map(|&epsilon| {
            let raw = (0..rounds)
                .into_par_iter()
                .map(|r| mia_round(x, n, alpha, epsilon, attack_round_seed(seed, r)))
                .collect::<Result<Vec<_>>>()?;
            let powers: Vec<f64> = raw.iter().map(|r| r.power).collect();
            let (power_mean, power_std) = mean_std(&powers);
            let fpr_realized = raw.iter().map(|r| r.fpr).sum::<f64>() / rounds as f64;
            Ok(AttackReport {
                epsilon,
                rounds,
                alpha,
                power_mean,
                power_std,
                fpr_realized,
                raw,
            })
        })
        .collect()
}
