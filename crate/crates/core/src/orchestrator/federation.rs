use log::debug;

use super::config::ExperimentConfig;
use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::fl::{
    evaluate, fedavg_aggregate, feddyn_server_update, ifca_round, mean_loss, model_init,
    train_clients, Algorithm, FedDynState, ModelParams, Regularizer, RoundResult,
};
use crate::seed::{self, stream};

/// Architecture `[input, hidden..., classes]` for this experiment.
pub fn model_widths(cfg: &ExperimentConfig, input_dim: usize, n_classes: usize) -> Vec<usize> {
    let mut widths = vec![input_dim];
    widths.extend(&cfg.hidden);
    widths.push(n_classes);
    widths
}

pub fn initial_model(cfg: &ExperimentConfig, input_dim: usize, n_classes: usize) -> Result<ModelParams> {
    model_init(&model_widths(cfg, input_dim, n_classes), cfg.seed)
}

fn wrap(round: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Round {
        round,
        source: Box::new(e),
    }
}

/// Runs `cfg.rounds` rounds of the configured algorithm from `init`.
/// `participants[0]` is the target; its test set scores every round.
pub fn run_federation(
    cfg: &ExperimentConfig,
    participants: &[ClientDataset],
    init: &ModelParams,
) -> Result<Vec<RoundResult>> {
    federate(cfg, participants, init, 0)
}

/// As [`run_federation`], with local shuffles drawn from stream `salt`.
pub(crate) fn federate(
    cfg: &ExperimentConfig,
    participants: &[ClientDataset],
    init: &ModelParams,
    salt: u64,
) -> Result<Vec<RoundResult>> {
    let Some(target) = participants.first() else {
        return Err(Error::precondition("federation needs the target client"));
    };
    if target.test.is_empty() {
        return Err(Error::precondition(format!(
            "first participant {} has no test set",
            target.client_id
        )));
    }
    let spec = cfg.local_spec(salt);
    let mut results = Vec::with_capacity(cfg.rounds + 1);

    if let Algorithm::Ifca { models: k } = cfg.algorithm {
        let mut models = Vec::with_capacity(k);
        models.push(init.clone());
        for j in 1..k {
            models.push(model_init(
                &init.widths(),
                seed::derive(cfg.seed, &[stream::MODEL_INIT, j as u64]),
            )?);
        }
        let pick = |models: &[ModelParams]| {
            let mut best = (0, f64::INFINITY);
            for (j, m) in models.iter().enumerate() {
                let loss = mean_loss(m, &target.train);
                if loss < best.1 {
                    best = (j, loss);
                }
            }
            best.0
        };
        let start = models[pick(&models)].clone();
        results.push(RoundResult {
            round: 0,
            target_test_accuracy: evaluate(&start, &target.test)?,
            global_params: start,
            per_client_params: Vec::new(),
        });
        for t in 1..=cfg.rounds {
            let (next, assignment) = ifca_round(&models, participants, &spec, t).map_err(wrap(t))?;
            models = next;
            let global = models[assignment[0]].clone();
            let acc = evaluate(&global, &target.test)?;
            debug!("round {t}: assignment {assignment:?}, target accuracy {acc}");
            results.push(RoundResult {
                round: t,
                global_params: global,
                per_client_params: assignment.iter().map(|&a| models[a].clone()).collect(),
                target_test_accuracy: acc,
            });
        }
        return Ok(results);
    }

    let mut global = init.clone();
    let mut states: Vec<FedDynState> = match cfg.algorithm {
        Algorithm::FedDyn { lambda } => participants
            .iter()
            .map(|_| FedDynState::new(init.len(), lambda))
            .collect(),
        _ => Vec::new(),
    };
    results.push(RoundResult {
        round: 0,
        target_test_accuracy: evaluate(&global, &target.test)?,
        global_params: global.clone(),
        per_client_params: Vec::new(),
    });
    for t in 1..=cfg.rounds {
        let updates = {
            let anchor = &global.values;
            let states = &states;
            train_clients(&global, participants, &spec, t, |k| match cfg.algorithm {
                Algorithm::FedProx { mu } => Regularizer::Proximal { mu, anchor },
                Algorithm::FedDyn { lambda } => Regularizer::Dynamic {
                    h: &states[k].h,
                    lambda,
                },
                _ => Regularizer::None,
            })
            .map_err(wrap(t))?
        };
        global = if let Algorithm::FedDyn { .. } = cfg.algorithm {
            let (g, s) = feddyn_server_update(&global, &updates, &states).map_err(wrap(t))?;
            states = s;
            g
        } else {
            fedavg_aggregate(&updates).map_err(wrap(t))?
        };
        let acc = evaluate(&global, &target.test)?;
        debug!("round {t}: target accuracy {acc}");
        results.push(RoundResult {
            round: t,
            global_params: global.clone(),
            per_client_params: updates.into_iter().map(|(m, _)| m).collect(),
            target_test_accuracy: acc,
        });
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalOutcome {
    /// Model after the last iteration that did not lower accuracy.
    pub model: ModelParams,
    /// Iterations executed (1-based index of the last peer tried).
    pub stop_round: usize,
    /// True when a strict accuracy drop ended the loop before the last peer.
    pub stopped_early: bool,
    pub best_accuracy: f64,
    /// Target test accuracy after each executed iteration.
    pub accuracies: Vec<f64>,
}

/// Trains the target with one peer at a time, closest first, each
/// federation warm-started from the previous model, until accuracy drops.
pub fn incremental_train(
    cfg: &ExperimentConfig,
    target: &ClientDataset,
    ordered_peers: &[(ClientDataset, f64)],
    init: &ModelParams,
) -> Result<IncrementalOutcome> {
    if ordered_peers.windows(2).any(|w| w[0].1 > w[1].1) {
        return Err(Error::precondition("peers must be sorted by ascending distance"));
    }
    if ordered_peers.is_empty() {
        let rounds = federate(cfg, std::slice::from_ref(target), init, 0)?;
        let last = rounds.last().expect("round 0 is always present");
        return Ok(IncrementalOutcome {
            model: last.global_params.clone(),
            stop_round: 0,
            stopped_early: false,
            best_accuracy: last.target_test_accuracy,
            accuracies: vec![last.target_test_accuracy],
        });
    }

    let mut model = init.clone();
    let mut best_model = init.clone();
    let mut best_accuracy = 0.0;
    let mut accuracies = Vec::new();
    let mut stopped = false;
    for (i, (peer, _)) in ordered_peers.iter().enumerate() {
        let pair = [target.clone(), peer.clone()];
        let rounds = federate(cfg, &pair, &model, i as u64 + 1)?;
        let last = rounds.into_iter().last().expect("round 0 is always present");
        model = last.global_params;
        let acc = last.target_test_accuracy;
        accuracies.push(acc);
        debug!("incremental step {}: peer {} accuracy {acc}", i + 1, peer.client_id);
        if acc < best_accuracy {
            stopped = true;
            break;
        }
        best_accuracy = acc;
        best_model = model.clone();
    }
    let stop_round = accuracies.len();
    Ok(IncrementalOutcome {
        model: best_model,
        stop_round,
        stopped_early: stopped && stop_round < ordered_peers.len(),
        best_accuracy,
        accuracies,
    })
}
