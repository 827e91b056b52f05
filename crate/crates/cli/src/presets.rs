//! Desk-scale experiment shapes for `grid --repro`.
//!
//! A preset contributes a config layer that sits beneath the user's file and
//! `--set` overrides, plus the grid it runs.

use clap::ValueEnum;
use fedsel_core::orchestrator::{CellMembers, FederationCell, FederationGrid, GridSpec, SelectionPolicy};
use fedsel_core::privacy::Epsilon;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Repro {
    /// Similar vs dissimilar collaborators.
    #[value(name = "tableII")]
    TableII,
    /// Threshold policies, all clients and incremental training.
    #[value(name = "tableIII")]
    TableIII,
    /// EMD against dissimilarity rate across privacy budgets.
    #[value(name = "fig3")]
    Fig3,
    /// Membership-inference power across privacy budgets.
    #[value(name = "fig5")]
    Fig5,
}

impl Repro {
    pub fn name(self) -> &'static str {
        match self {
            Repro::TableII => "tableII",
            Repro::TableIII => "tableIII",
            Repro::Fig3 => "fig3",
            Repro::Fig5 => "fig5",
        }
    }

    /// Config fragments, lowest precedence first.
    pub fn layers(self) -> &'static [&'static str] {
        match self {
            Repro::TableII => &[TRAINING, TABLE_II],
            Repro::TableIII => &[TRAINING, TABLE_III],
            Repro::Fig3 => &[FIG3],
            Repro::Fig5 => &[FIG5],
        }
    }

    pub fn grid(self, cfg: &RunConfig, seed: u64) -> GridSpec {
        match self {
            Repro::Fig3 => GridSpec::EmdCurve {
                epsilons: fig3_epsilons(),
            },
            Repro::Fig5 => GridSpec::Attack {
                epsilons: cfg.experiment.attack.epsilons.clone(),
            },
            Repro::TableII => GridSpec::Federation(FederationGrid {
                cells: table_ii_cells(),
                algorithms: cfg.algorithms(),
                seeds: seeds(seed, cfg.repeats),
            }),
            Repro::TableIII => GridSpec::Federation(FederationGrid {
                cells: table_iii_cells(cfg.experiment.partition.rates.len()),
                algorithms: cfg.algorithms(),
                seeds: seeds(seed, cfg.repeats),
            }),
        }
    }
}

/// Training regime shared by the federation presets.
const TRAINING: &str = r#"
dataset.kind = "synthetic"
dataset.samples_per_cluster = 600
dataset.spread = 0.2
partition.per_cluster_train = 30
partition.test_size = 300
ldp.epsilon = 10.0
cluster.source = "pooled"
fl.learning_rate = 0.3
fl.batch_size = 16
fl.epochs = 5
fl.rounds = 20
model.hidden = [64]
"#;

const TABLE_II: &str = r#"
partition.rates = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
"#;

const TABLE_III: &str = r#"
partition.rates = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
"#;

const FIG3: &str = r#"
dataset.kind = "synthetic"
dataset.samples_per_cluster = 600
dataset.spread = 0.1
partition.per_cluster_train = 150
partition.test_size = 150
partition.rates = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
cluster.source = "reference"
"#;

const FIG5: &str = r#"
dataset.kind = "synthetic"
dataset.samples_per_cluster = 600
partition.per_cluster_train = 150
partition.test_size = 150
attack.epsilons = [0.1, 1.0, 10.0, 100.0, 1000.0]
attack.rounds = 50
attack.alpha = 0.05
"#;

pub fn fig3_epsilons() -> Vec<Epsilon> {
    vec![
        Epsilon::Finite(0.1),
        Epsilon::Finite(1.0),
        Epsilon::Finite(10.0),
        Epsilon::NoNoise,
    ]
}

fn seeds(seed: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|i| seed + i).collect()
}

/// Peers 0-3 share the target's distribution, peers 4-7 are disjoint from it.
pub fn table_ii_cells() -> Vec<FederationCell> {
    vec![
        FederationCell::new("local", CellMembers::LocalOnly),
        FederationCell::new("similar", CellMembers::Peers(vec![0, 1, 2, 3])),
        FederationCell::new("dissimilar", CellMembers::Peers(vec![4, 5, 6, 7])),
    ]
}

/// Policy cells, then one cell per prefix of the rate-ordered peers.
pub fn table_iii_cells(n_peers: usize) -> Vec<FederationCell> {
    let mut cells = vec![
        FederationCell::new("local", CellMembers::LocalOnly),
        FederationCell::new("strict", CellMembers::Policy(SelectionPolicy::Strict)),
        FederationCell::new("lenient", CellMembers::Policy(SelectionPolicy::Lenient)),
        FederationCell::new("all", CellMembers::AllPeers),
        FederationCell::new("incremental", CellMembers::Incremental),
    ];
    for k in 1..n_peers {
        cells.push(FederationCell::new(
            format!("first{k}"),
            CellMembers::Peers((0..k).collect()),
        ));
    }
    cells
}
