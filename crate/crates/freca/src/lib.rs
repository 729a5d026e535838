//! Deterministic single-process federated-learning simulator built around
//! FedTruth truth-discovery aggregation and the FRECA client-contribution
//! metrics (aggregation weight and net contribution), with exact Shapley
//! and leave-one-out baselines for comparison.
//!
//! The crate is organized around one round of federated learning: clients
//! train locally ([`model`]), possibly misbehave ([`attacks`]), the server
//! aggregates their updates ([`aggregation`]), and every client is scored
//! ([`contribution`]). The [`orchestrator`] wires those pieces into seeded,
//! bit-reproducible experiments; [`config`] and [`report`] provide the
//! declarative front end and the CSV/JSON/SVG artifacts.

pub mod aggregation;
pub mod attacks;
pub mod config;
pub mod contribution;
pub mod data;
pub mod model;
pub mod orchestrator;
pub mod params;
pub mod report;
pub mod seed;

pub use aggregation::{
    fedavg, fedtruth, DistanceKind, FedTruthResult, ModelUpdate, RegulationKind,
};
pub use config::ExperimentConfig;
pub use contribution::{ContributionReport, UtilityOracle};
pub use model::{LabeledDataset, ModelSpec, TrainConfig};
pub use orchestrator::{run_experiment, ExperimentOutcome, ExperimentReport};
pub use params::ParamVector;
