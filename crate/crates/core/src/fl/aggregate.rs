use rayon::prelude::*;

use super::local::{local_train, LocalSpec, Regularizer};
use super::model::{mean_loss, ModelParams};
use crate::data::ClientDataset;
use crate::error::{Error, Result};

/// Per-client correction state kept by the dynamic-regularization server.
#[derive(Debug, Clone, PartialEq)]
pub struct FedDynState {
    pub h: Vec<f64>,
    pub lambda: f64,
}

impl FedDynState {
    pub fn new(len: usize, lambda: f64) -> Self {
        Self {
            h: vec![0.0; len],
            lambda,
        }
    }
}

fn check_updates(updates: &[(ModelParams, usize)]) -> Result<f64> {
    let Some((first, _)) = updates.first() else {
        return Err(Error::precondition("aggregation needs at least one update"));
    };
    for (k, (u, n)) in updates.iter().enumerate() {
        first.check_same_layout(u)?;
        if *n == 0 {
            return Err(Error::precondition(format!("update {k} has zero samples")));
        }
    }
    Ok(updates.iter().map(|(_, n)| *n as f64).sum())
}

/// Sample-count weighted mean of client models, computed as
/// `w_1 + sum_k (n_k / n) (w_k - w_1)`. When every update is identical the
/// result is bitwise identical to it.
pub fn fedavg_aggregate(updates: &[(ModelParams, usize)]) -> Result<ModelParams> {
    let total = check_updates(updates)?;
    let base = &updates[0].0;
    let values = base
        .values
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let delta: f64 = updates
                .iter()
                .map(|(u, n)| (*n as f64 / total) * (u.values[i] - b))
                .sum();
            b + delta
        })
        .collect();
    Ok(base.with_values(values))
}

/// Server step of dynamic regularization: every participating client's
/// state moves by `-lambda (w_k - w_prev)` and the new global model is the
/// weighted mean of the client models.
pub fn feddyn_server_update(
    prev_global: &ModelParams,
    updates: &[(ModelParams, usize)],
    states: &[FedDynState],
) -> Result<(ModelParams, Vec<FedDynState>)> {
    if states.len() != updates.len() {
        return Err(Error::shape(format!(
            "{} client states for {} updates",
            states.len(),
            updates.len()
        )));
    }
    prev_global.check_same_layout(&updates.first().ok_or_else(|| Error::precondition("aggregation needs at least one update"))?.0)?;
    let global = fedavg_aggregate(updates)?;
    let new_states = states
        .iter()
        .zip(updates)
        .map(|(s, (w, _))| {
            if s.lambda == 0.0 {
                return s.clone();
            }
            let h = s
                .h
                .iter()
                .zip(w.values.iter().zip(&prev_global.values))
                .map(|(h, (wk, wp))| h - s.lambda * (wk - wp))
                .collect();
            FedDynState { h, lambda: s.lambda }
        })
        .collect();
    Ok((global, new_states))
}

/// Trains every client from `global` in parallel; results come back in
/// client order.
pub fn train_clients<'r>(
    global: &ModelParams,
    clients: &[ClientDataset],
    spec: &LocalSpec,
    round: usize,
    reg: impl Fn(usize) -> Regularizer<'r> + Sync,
) -> Result<Vec<(ModelParams, usize)>> {
    clients
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let m = local_train(global, &c.train, &spec.for_client(round, k), reg(k))?;
            Ok((m, c.train.len()))
        })
        .collect()
}

/// One round of clustered federated learning. Each client picks the model
/// with the lowest loss on its training data (ties go to the lowest model
/// index), trains from it, and each model is replaced by the weighted mean of
/// its members. A model with no members is left unchanged.
pub fn ifca_round(
    models: &[ModelParams],
    clients: &[ClientDataset],
    spec: &LocalSpec,
    round: usize,
) -> Result<(Vec<ModelParams>, Vec<usize>)> {
    if models.is_empty() {
        return Err(Error::precondition("clustered round needs at least one model"));
    }
    let assignment: Vec<usize> = clients
        .par_iter()
        .map(|c| {
            let mut best = 0;
            let mut best_loss = f64::INFINITY;
            for (j, m) in models.iter().enumerate() {
                let loss = mean_loss(m, &c.train);
                if loss < best_loss {
                    best = j;
                    best_loss = loss;
                }
            }
            best
        })
        .collect();

    let trained: Vec<(ModelParams, usize)> = clients
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let start = &models[assignment[k]];
            let m = local_train(start, &c.train, &spec.for_client(round, k), Regularizer::None)?;
            Ok((m, c.train.len()))
        })
        .collect::<Result<_>>()?;

    let mut next = Vec::with_capacity(models.len());
    for (j, m) in models.iter().enumerate() {
        let members: Vec<(ModelParams, usize)> = trained
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == j)
            .map(|(u, _)| u.clone())
            .collect();
        if members.is_empty() {
            next.push(m.clone());
        } else {
            next.push(fedavg_aggregate(&members)?);
        }
    }
    Ok((next, assignment))
}
