use rand::Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// Flat parameter vector of a dense ReLU network plus the layout that
/// describes how it is cut into tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub layout: Vec<(String, Vec<usize>)>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Layer widths `[input, hidden..., classes]` recovered from the layout.
    pub fn widths(&self) -> Vec<usize> {
        let mut widths = Vec::new();
        for (name, shape) in &self.layout {
            if name.ends_with(".weight") {
                if widths.is_empty() {
                    widths.push(shape[1]);
                }
                widths.push(shape[0]);
            }
        }
        widths
    }

    pub fn n_classes(&self) -> usize {
        self.widths().last().copied().unwrap_or(0)
    }

    pub fn check_same_layout(&self, other: &ModelParams) -> Result<()> {
        if self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(Error::shape("model layouts differ"));
        }
        Ok(())
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> ModelParams {
        ModelParams {
            values,
            layout: self.layout.clone(),
        }
    }
}

pub fn layout_for(widths: &[usize]) -> Vec<(String, Vec<usize>)> {
    widths
        .windows(2)
        .enumerate()
        .flat_map(|(l, w)| {
            [
                (format!("dense{l}.weight"), vec![w[1], w[0]]),
                (format!("dense{l}.bias"), vec![w[1]]),
            ]
        })
        .collect()
}

/// Deterministic initialization: every tensor of layer `l` is drawn from
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn model_init(widths: &[usize], seed: u64) -> Result<ModelParams> {
    if widths.len() < 2 {
        return Err(Error::validation(
            "architecture needs at least an input and an output width",
        ));
    }
    if let Some(pos) = widths.iter().position(|&w| w == 0) {
        return Err(Error::validation(format!("layer width {pos} is zero")));
    }
    let layout = layout_for(widths);
    let mut rng = seed::derived_rng(seed, &[stream::MODEL_INIT]);
    let mut values = Vec::with_capacity(layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum());
    // biases share the bound of their weight matrix
    for w in widths.windows(2) {
        let bound = 1.0 / (w[0] as f64).sqrt();
        for _ in 0..w[0] * w[1] + w[1] {
            values.push(rng.gen_range(-bound..bound));
        }
    }
    Ok(ModelParams { values, layout })
}

/// Borrowed view that knows where each layer lives in the flat vector.
pub(crate) struct Network<'a> {
    widths: Vec<usize>,
    params: &'a [f64],
}

impl<'a> Network<'a> {
    pub(crate) fn new(model: &'a ModelParams) -> Self {
        Self {
            widths: model.widths(),
            params: &model.values,
        }
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.widths.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.widths.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for (l, (off, fan_in, fan_out)) in self.layers().enumerate() {
            let input = &acts[l];
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            if l + 1 < n_layers {
                // NaN must survive the activation so divergence is detected
                out.iter_mut().filter(|v| **v < 0.0).for_each(|v| *v = 0.0);
            }
            acts.push(out);
        }
        acts
    }

    pub(crate) fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().expect("at least one layer")
    }

    /// Cross-entropy of one sample; accumulates `scale * dloss/dparams` into `grad`
    /// when given.
    pub(crate) fn sample_loss(&self, s: &Sample, grad: Option<(&mut [f64], f64)>) -> f64 {
        let acts = self.forward(&s.pixels);
        let logits = acts.last().expect("logits");
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let loss = sum.ln() + max - logits.get(s.label).copied().unwrap_or(f64::NAN);
        let Some((grad, scale)) = grad else {
            return loss;
        };

        let mut delta: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        if let Some(d) = delta.get_mut(s.label) {
            *d -= 1.0;
        }
        let layers: Vec<_> = self.layers().collect();
        for (l, &(off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let input = &acts[l];
            let (gw, rest) = grad[off..].split_at_mut(fan_in * fan_out);
            let gb = &mut rest[..fan_out];
            for o in 0..fan_out {
                let d = delta[o] * scale;
                gb[o] += d;
                for (g, a) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let w = &self.params[off..off + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    for (p, wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * wv;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        loss
    }
}

/// Index of the largest logit; ties resolve to the lowest class index.
pub fn predict(params: &ModelParams, x: &[f64]) -> usize {
    argmax(&Network::new(params).logits(x))
}

fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy.
pub fn evaluate(params: &ModelParams, test: &[Sample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::precondition("evaluation needs a non-empty test set"));
    }
    let net = Network::new(params);
    let correct = test
        .iter()
        .filter(|s| argmax(&net.logits(&s.pixels)) == s.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Mean cross-entropy over `samples`.
pub fn mean_loss(params: &ModelParams, samples: &[Sample]) -> f64 {
    let net = Network::new(params);
    samples.iter().map(|s| net.sample_loss(s, None)).sum::<f64>() / samples.len().max(1) as f64
}
