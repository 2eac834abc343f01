//! Federated adherence simulator.
//!
//! Each simulated household keeps its adherence log on the client side and
//! only ever hands the coordinator a [`ClientUpdate`]: a parameter delta, a
//! sample count and a loss. The coordinator merges updates with federated
//! averaging, optionally scaling client weights by `loss^q` to favour
//! clients the global model serves badly.

mod aggregate;
mod config;
mod data;
mod model;
mod sim;

pub use aggregate::{aggregate, aggregation_weights, AggregationMode, FedRound};
pub use config::FedConfig;
pub use data::{features, generate_population, ClientDataset, Example, PopulationSpec, FEATURE_DIM};
pub use model::{
    gradient, local_train, loss, predict, ClassWeighting, ClientUpdate, LocalOutcome, ModelParams,
    PARAM_DIM,
};
pub use sim::{evaluate_fairness, run_federation, Client, FairnessStats, FedHistory, RoundMetrics};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FedError {
    #[error("invalid population spec: {0}")]
    Spec(String),
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}
