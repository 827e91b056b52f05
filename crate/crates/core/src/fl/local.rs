use rand::seq::SliceRandom;

use super::model::{ModelParams, Network};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::seed;

/// Client-side optimizer settings. The loss is always softmax cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_round: usize,
    pub seed: u64,
}

impl Default for LocalSpec {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs_per_round: 1,
            seed: 0,
        }
    }
}

impl LocalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::validation("epochs_per_round must be at least 1"));
        }
        Ok(())
    }

    /// Spec with the seed specialised to one client in one round.
    pub fn for_client(&self, round: usize, client: usize) -> LocalSpec {
        LocalSpec {
            seed: seed::derive(self.seed, &[seed::stream::LOCAL_TRAIN, round as u64, client as u64]),
            ..self.clone()
        }
    }
}

/// Extra term added to the local objective.
#[derive(Debug, Clone, Copy)]
pub enum Regularizer<'a> {
    None,
    /// `mu/2 * ||w - anchor||^2`
    Proximal { mu: f64, anchor: &'a [f64] },
    /// `-<h, w> + lambda/2 * ||w||^2`
    Dynamic { h: &'a [f64], lambda: f64 },
}

impl Regularizer<'_> {
    fn check(&self, len: usize) -> Result<()> {
        let other = match self {
            Regularizer::None => return Ok(()),
            Regularizer::Proximal { anchor, .. } => anchor.len(),
            Regularizer::Dynamic { h, .. } => h.len(),
        };
        if other != len {
            return Err(Error::shape(format!(
                "regularizer vector has {other} entries, model has {len}"
            )));
        }
        Ok(())
    }

    fn value(&self, w: &[f64]) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::Proximal { mu, anchor } => {
                0.5 * mu * w.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            Regularizer::Dynamic { h, lambda } => {
                let lin: f64 = w.iter().zip(h).map(|(a, b)| a * b).sum();
                let sq: f64 = w.iter().map(|a| a * a).sum();
                -lin + 0.5 * lambda * sq
            }
        }
    }

    /// Adds the regularizer gradient to `grad`. Zero coefficients are skipped
    /// so that the plain update is reproduced bit for bit.
    fn add_gradient(&self, w: &[f64], grad: &mut [f64]) {
        match *self {
            Regularizer::None => {}
            Regularizer::Proximal { mu, anchor } => {
                if mu != 0.0 {
                    for ((g, a), b) in grad.iter_mut().zip(w).zip(anchor) {
                        *g += mu * (a - b);
                    }
                }
            }
            Regularizer::Dynamic { h, lambda } => {
                for ((g, a), hv) in grad.iter_mut().zip(w).zip(h) {
                    *g -= hv;
                    if lambda != 0.0 {
                        *g += lambda * a;
                    }
                }
            }
        }
    }
}

/// Mean cross-entropy over `batch` plus the regularizer.
pub fn objective(params: &ModelParams, batch: &[Sample], reg: Regularizer<'_>) -> f64 {
    let net = Network::new(params);
    let ce = batch.iter().map(|s| net.sample_loss(s, None)).sum::<f64>() / batch.len().max(1) as f64;
    ce + reg.value(&params.values)
}

/// Gradient of [`objective`] with respect to the flat parameters.
pub fn gradient(params: &ModelParams, batch: &[Sample], reg: Regularizer<'_>) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    batch_gradient(params, batch.iter(), batch.len(), &mut grad);
    reg.add_gradient(&params.values, &mut grad);
    grad
}

fn batch_gradient<'s>(
    params: &ModelParams,
    batch: impl Iterator<Item = &'s Sample>,
    size: usize,
    grad: &mut [f64],
) -> f64 {
    let net = Network::new(params);
    let scale = 1.0 / size.max(1) as f64;
    let mut loss = 0.0;
    for s in batch {
        loss += net.sample_loss(s, Some((grad, scale)));
    }
    loss * scale
}

/// Mini-batch SGD from `start` for `spec.epochs_per_round` epochs. Batches are
/// drawn from a fresh permutation each epoch, seeded by `spec.seed`.
pub fn local_train(
    start: &ModelParams,
    train: &[Sample],
    spec: &LocalSpec,
    reg: Regularizer<'_>,
) -> Result<ModelParams> {
    spec.validate()?;
    reg.check(start.len())?;
    let classes = start.n_classes();
    let dim = start.widths()[0];
    for (i, s) in train.iter().enumerate() {
        if s.pixels.len() != dim {
            return Err(Error::shape(format!(
                "sample {i} has {} features, model expects {dim}",
                s.pixels.len()
            )));
        }
        if s.label >= classes {
            return Err(Error::validation(format!(
                "sample {i} has label {}, model has {classes} classes",
                s.label
            )));
        }
    }

    let mut model = start.clone();
    if train.is_empty() {
        return Ok(model);
    }
    let mut rng = seed::rng(spec.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; model.len()];
    let mut batch_index = 0;
    for _ in 0..spec.epochs_per_round {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = batch_gradient(&model, chunk.iter().map(|&i| &train[i]), chunk.len(), &mut grad);
            if !loss.is_finite() {
                return Err(Error::Divergence { batch: batch_index, loss });
            }
            reg.add_gradient(&model.values, &mut grad);
            for (w, g) in model.values.iter_mut().zip(&grad) {
                *w -= spec.learning_rate * g;
            }
            batch_index += 1;
        }
    }
    Ok(model)
}
