//! Federated training: a small dense classifier, local SGD with optional
//! proximal or dynamic regularization, and server-side aggregation rules.

mod aggregate;
mod local;
mod model;

pub use aggregate::{fedavg_aggregate, feddyn_server_update, ifca_round, train_clients, FedDynState};
pub use local::{gradient, local_train, objective, LocalSpec, Regularizer};
pub use model::{evaluate, layout_for, mean_loss, model_init, predict, ModelParams};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Server-side algorithm and its coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    FedAvg,
    FedProx { mu: f64 },
    FedDyn { lambda: f64 },
    Ifca { models: usize },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx { .. } => "fedprox",
            Algorithm::FedDyn { .. } => "feddyn",
            Algorithm::Ifca { .. } => "ifca",
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        match *self {
            Algorithm::FedProx { mu } if !(mu >= 0.0 && mu.is_finite()) => {
                Err(Error::validation("fl.mu must be finite and non-negative"))
            }
            Algorithm::FedDyn { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(Error::validation("fl.lambda must be finite and non-negative"))
            }
            Algorithm::Ifca { models: 0 } => Err(Error::validation("fl.ifca_models must be at least 1")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses the bare algorithm name; coefficients are filled with defaults
/// (`mu = 0.01`, `lambda = 0.01`, two cluster models).
impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Algorithm::FedAvg),
            "fedprox" => Ok(Algorithm::FedProx { mu: 0.01 }),
            "feddyn" => Ok(Algorithm::FedDyn { lambda: 0.01 }),
            "ifca" => Ok(Algorithm::Ifca { models: 2 }),
            other => Err(Error::validation(format!(
                "fl.algorithm: unknown algorithm {other:?} (expected fedavg, fedprox, feddyn or ifca)"
            ))),
        }
    }
}

/// State after one federation round. Round 0 describes the initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub round: usize,
    /// The model the target client ends the round with.
    pub global_params: ModelParams,
    pub per_client_params: Vec<ModelParams>,
    pub target_test_accuracy: f64,
}
