use rayon::prelude::*;

use super::cohort::{measure_distances, order_by_distance, prepare_cohort, select_collaborators, Cohort};
use super::config::{ExperimentConfig, SelectionPolicy};
use super::federation::{incremental_train, initial_model, run_federation};
use super::report::{Cell, Table};
use crate::data::ClientDataset;
use crate::error::Result;
use crate::fl::Algorithm;
use crate::privacy::{mia_power_curve, Epsilon};

/// Who trains with the target in one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CellMembers {
    LocalOnly,
    /// Fixed peer indices.
    Peers(Vec<usize>),
    /// Peers chosen by measured distance under a threshold policy.
    Policy(SelectionPolicy),
    AllPeers,
    /// Sequential training by ascending distance, stopping on a drop.
    Incremental,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationCell {
    pub label: String,
    pub members: CellMembers,
}

impl FederationCell {
    pub fn new(label: impl Into<String>, members: CellMembers) -> Self {
        Self {
            label: label.into(),
            members,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationGrid {
    pub cells: Vec<FederationCell>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    /// Target-to-peer EMD for every peer at each budget.
    EmdCurve { epsilons: Vec<Epsilon> },
    /// Membership-inference power at each budget.
    Attack { epsilons: Vec<Epsilon> },
    Federation(FederationGrid),
}

pub const EMD_COLUMNS: [&str; 4] = ["epsilon", "client", "rate", "emd"];
pub const ATTACK_COLUMNS: [&str; 6] = ["epsilon", "rounds", "alpha", "power_mean", "power_std", "fpr"];
pub const FEDERATION_COLUMNS: [&str; 9] = [
    "seed",
    "algorithm",
    "cell",
    "n_clients",
    "selected",
    "accuracy",
    "best_accuracy",
    "stop_round",
    "stopped_early",
];

pub fn experiment_grid(cfg: &ExperimentConfig, spec: &GridSpec) -> Result<Table> {
    match spec {
        GridSpec::EmdCurve { epsilons } => emd_curve(cfg, epsilons),
        GridSpec::Attack { epsilons } => attack_grid(cfg, epsilons),
        GridSpec::Federation(grid) => federation_grid(cfg, grid),
    }
}

pub fn emd_curve(cfg: &ExperimentConfig, epsilons: &[Epsilon]) -> Result<Table> {
    let mut table = Table::new("emd_curve", &EMD_COLUMNS);
    if epsilons.is_empty() {
        return Ok(table);
    }
    let cohort = prepare_cohort(cfg)?;
    let reports = epsilons
        .par_iter()
        .map(|&eps| measure_distances(&cohort, cfg, eps))
        .collect::<Result<Vec<_>>>()?;
    for report in reports {
        for d in &report.distances {
            table.push(vec![
                report.epsilon.to_string().into(),
                d.client_id.clone().into(),
                d.rate.into(),
                d.distance.into(),
            ]);
        }
    }
    Ok(table)
}

pub fn attack_grid(cfg: &ExperimentConfig, epsilons: &[Epsilon]) -> Result<Table> {
    let mut table = Table::new("attack", &ATTACK_COLUMNS);
    if epsilons.is_empty() {
        return Ok(table);
    }
    let cohort = prepare_cohort(cfg)?;
    let a = &cfg.attack;
    let reports = mia_power_curve(&cohort.projected_pool, a.sample_size, a.alpha, epsilons, a.rounds, cfg.seed)?;
    for r in reports {
        table.push(vec![
            r.epsilon.to_string().into(),
            r.rounds.into(),
            r.alpha.into(),
            r.power_mean.into(),
            r.power_std.into(),
            r.fpr_realized.into(),
        ]);
    }
    Ok(table)
}

struct CellOutcome {
    n_clients: usize,
    selected: Vec<String>,
    accuracy: f64,
    best_accuracy: f64,
    stop_round: Option<usize>,
    stopped_early: Option<bool>,
}

fn needs_distances(grid: &FederationGrid) -> bool {
    grid.cells
        .iter()
        .any(|c| matches!(c.members, CellMembers::Policy(_) | CellMembers::Incremental))
}

fn run_cell(
    cfg: &ExperimentConfig,
    cohort: &Cohort,
    target: &ClientDataset,
    peers: &[ClientDataset],
    order: &[(usize, f64)],
    cell: &FederationCell,
) -> Result<CellOutcome> {
    let dim = cohort.input_dim(cfg.features);
    let init = initial_model(cfg, dim, cohort.n_classes)?;
    let chosen: Vec<usize> = match &cell.members {
        CellMembers::LocalOnly => Vec::new(),
        CellMembers::Peers(idx) => idx.clone(),
        CellMembers::AllPeers => (0..peers.len()).collect(),
        CellMembers::Policy(policy) => {
            let distances: Vec<_> = order
                .iter()
                .map(|&(peer, distance)| super::cohort::PeerDistance {
                    peer,
                    client_id: peers[peer].client_id.clone(),
                    rate: cohort.peers[peer].rate,
                    distance,
                })
                .collect();
            let mut s = select_collaborators(&distances, *policy).selected;
            s.sort_unstable();
            s
        }
        CellMembers::Incremental => {
            let ordered: Vec<(ClientDataset, f64)> =
                order.iter().map(|&(p, d)| (peers[p].clone(), d)).collect();
            let out = incremental_train(cfg, target, &ordered, &init)?;
            let kept = if out.accuracies.last().is_some_and(|&a| a < out.best_accuracy) {
                out.stop_round - 1
            } else {
                out.stop_round
            };
            return Ok(CellOutcome {
                n_clients: 1 + kept,
                selected: order[..kept].iter().map(|&(p, _)| peers[p].client_id.clone()).collect(),
                accuracy: out.best_accuracy,
                best_accuracy: out.best_accuracy,
                stop_round: Some(out.stop_round),
                stopped_early: Some(out.stopped_early),
            });
        }
    };
    let mut participants = vec![target.clone()];
    participants.extend(chosen.iter().map(|&i| peers[i].clone()));
    let rounds = run_federation(cfg, &participants, &init)?;
    let accuracy = rounds.last().map_or(0.0, |r| r.target_test_accuracy);
    let best_accuracy = rounds
        .iter()
        .map(|r| r.target_test_accuracy)
        .fold(0.0, f64::max);
    Ok(CellOutcome {
        n_clients: participants.len(),
        selected: chosen.iter().map(|&i| peers[i].client_id.clone()).collect(),
        accuracy,
        best_accuracy,
        stop_round: None,
        stopped_early: None,
    })
}

pub fn federation_grid(cfg: &ExperimentConfig, grid: &FederationGrid) -> Result<Table> {
    let mut table = Table::new("federation", &FEDERATION_COLUMNS);
    if grid.cells.is_empty() || grid.algorithms.is_empty() || grid.seeds.is_empty() {
        return Ok(table);
    }
    let per_seed = grid
        .seeds
        .par_iter()
        .map(|&seed| {
            let cfg = cfg.with_seed(seed);
            let cohort = prepare_cohort(&cfg)?;
            let (target, peers) = cohort.training_view(cfg.features);
            let order: Vec<(usize, f64)> = if needs_distances(grid) {
                let report = measure_distances(&cohort, &cfg, cfg.epsilon)?;
                order_by_distance(&report.distances)
                    .into_iter()
                    .map(|d| (d.peer, d.distance))
                    .collect()
            } else {
                Vec::new()
            };
            let jobs: Vec<(&Algorithm, &FederationCell)> = grid
                .algorithms
                .iter()
                .flat_map(|a| grid.cells.iter().map(move |c| (a, c)))
                .collect();
            let outcomes = jobs
                .par_iter()
                .map(|&(alg, cell)| {
                    let cfg = ExperimentConfig {
                        algorithm: *alg,
                        ..cfg.clone()
                    };
                    run_cell(&cfg, &cohort, &target, &peers, &order, cell)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(jobs
                .into_iter()
                .zip(outcomes)
                .map(|((alg, cell), o)| {
                    vec![
                        seed.into(),
                        alg.name().into(),
                        cell.label.clone().into(),
                        o.n_clients.into(),
                        o.selected.join(";").into(),
                        o.accuracy.into(),
                        o.best_accuracy.into(),
                        o.stop_round.map_or(Cell::Empty, Cell::from),
                        o.stopped_early.map_or(Cell::Empty, Cell::from),
                    ]
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    for rows in per_seed {
        for row in rows {
            table.push(row);
        }
    }
    Ok(table)
}
