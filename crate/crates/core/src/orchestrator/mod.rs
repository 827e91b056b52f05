//! End-to-end pipeline: cohort construction, private similarity measurement,
//! threshold selection, federated training and the experiment grids.

mod cohort;
mod config;
mod federation;
pub mod grid;
pub mod report;

pub use cohort::{
    measure_distances, noisy_releases, order_by_distance, peer_id, pqfed_select, prepare_cohort,
    prepare_cohort_from_pool, select_collaborators, Cohort, Peer, PeerDistance, Selection,
    SimilarityReport,
};
pub use config::{
    AttackConfig, ClusterSource, DatasetSource, ExperimentConfig, FeatureSpace, PartitionConfig,
    SelectionPolicy,
};
pub use federation::{incremental_train, initial_model, model_widths, run_federation, IncrementalOutcome};
pub use grid::{experiment_grid, CellMembers, FederationCell, FederationGrid, GridSpec};
pub use report::{Cell, Table};
