//! Declarative experiment configuration: the TOML file schema, the five
//! case presets, flag overrides, and semantic validation.
//!
//! A config file only needs the keys it wants to change; everything else
//! comes from the named case preset. Present tables replace the preset's
//! table wholesale, so a `[model]` section must be complete. Unknown keys
//! are rejected, not ignored. The resolved [`ExperimentConfig`] is what
//! gets echoed into reports and round-trips losslessly through TOML.
//!
//! Sub-seeds (data, partition, training, selection, attack) are not part
//! of the config; they all derive from `master_seed` through the
//! documented hierarchy in [`crate::seed`].

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{DistanceKind, RegulationKind};
use crate::attacks::{AttackKind, AttackSpec};
use crate::data::{PartitionScheme, PartitionSpec, SyntheticSpec};
use crate::model::{ModelKind, ModelSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config key `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("serializing config: {0}")]
    Serialize(String),
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

/// The experiment scenarios from the evaluation setup: two non-iid label
/// splits, three boosted-attacker counts, or a free-form custom run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseName {
    Case1,
    Case2,
    Case3,
    Case4,
    Case5,
    Custom,
}

impl std::str::FromStr for CaseName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "case1" => Ok(CaseName::Case1),
            "case2" => Ok(CaseName::Case2),
            "case3" => Ok(CaseName::Case3),
            "case4" => Ok(CaseName::Case4),
            "case5" => Ok(CaseName::Case5),
            "custom" => Ok(CaseName::Custom),
            other => Err(format!(
                "unknown case `{other}`; expected case1..case5 or custom"
            )),
        }
    }
}

impl std::fmt::Display for CaseName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            CaseName::Case1 => "case1",
            CaseName::Case2 => "case2",
            CaseName::Case3 => "case3",
            CaseName::Case4 => "case4",
            CaseName::Case5 => "case5",
            CaseName::Custom => "custom",
        };
        f.write_str(name)
    }
}

/// Which contribution metrics to compute each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Aw,
    Net,
    Sv,
    Loo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindName {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKindName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_units: Option<usize>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn to_spec(&self) -> Result<ModelSpec, ConfigError> {
        let kind = match (self.kind, self.hidden_units) {
            (ModelKindName::Linear, None) => ModelKind::Linear,
            (ModelKindName::Linear, Some(_)) => {
                return Err(invalid(
                    "model.hidden_units",
                    "only valid for kind = \"mlp\"",
                ))
            }
            (ModelKindName::Mlp, Some(h)) if h > 0 => ModelKind::Mlp { hidden_units: h },
            (ModelKindName::Mlp, Some(_)) => {
                return Err(invalid("model.hidden_units", "must be positive"))
            }
            (ModelKindName::Mlp, None) => {
                return Err(invalid("model.hidden_units", "required for kind = \"mlp\""))
            }
        };
        let spec = ModelSpec {
            kind,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        };
        spec.validate()
            .map_err(|e| invalid("model", e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSourceName {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSourceName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}

impl DataConfig {
    pub fn to_synthetic_spec(&self, seed: u64) -> Result<SyntheticSpec, ConfigError> {
        Ok(SyntheticSpec {
            num_classes: self
                .num_classes
                .ok_or_else(|| invalid("data.num_classes", "required for synthetic data"))?,
            input_dim: self
                .input_dim
                .ok_or_else(|| invalid("data.input_dim", "required for synthetic data"))?,
            cluster_spread: self
                .cluster_spread
                .ok_or_else(|| invalid("data.cluster_spread", "required for synthetic data"))?,
            samples: self
                .samples
                .ok_or_else(|| invalid("data.samples", "required for synthetic data"))?,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Iid,
    LabelsPerClient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub scheme: SchemeName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_counts: Option<Vec<usize>>,
    pub clients: usize,
    pub samples_per_client: usize,
}

impl PartitionConfig {
    pub fn to_partition_spec(&self, seed: u64) -> Result<PartitionSpec, ConfigError> {
        let scheme = match self.scheme {
            SchemeName::Iid => PartitionScheme::Iid,
            SchemeName::LabelsPerClient => PartitionScheme::LabelsPerClient {
                counts: self
                    .label_counts
                    .clone()
                    .ok_or_else(|| invalid("partition.label_counts", "required for this scheme"))?,
            },
        };
        Ok(PartitionSpec {
            scheme,
            clients: self.clients,
            samples_per_client: self.samples_per_client,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKindName {
    Boost,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKindName,
    pub attacker_ids: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl AttackConfig {
    pub fn to_attack_spec(&self, seed: u64) -> Result<AttackSpec, ConfigError> {
        let kind = match self.kind {
            AttackKindName::Boost => AttackKind::Boost {
                factor: self
                    .factor
                    .ok_or_else(|| invalid("attack.factor", "required for boost attacks"))?,
            },
            AttackKindName::Gaussian => AttackKind::Gaussian {
                sigma: self
                    .sigma
                    .ok_or_else(|| invalid("attack.sigma", "required for gaussian attacks"))?,
            },
        };
        Ok(AttackSpec {
            attacker_ids: self.attacker_ids.iter().copied().collect(),
            kind,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKindName {
    Fedavg,
    Fedtruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceName {
    Euclidean,
    Angular,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegulationName {
    Reciprocal,
    NegLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    pub kind: AggregatorKindName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<DistanceName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regulation: Option<RegulationName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl AggregatorConfig {
    pub fn distance_kind(&self) -> Result<DistanceKind, ConfigError> {
        match self.distance.unwrap_or(DistanceName::Euclidean) {
            DistanceName::Euclidean => Ok(DistanceKind::Euclidean),
            DistanceName::Angular => Ok(DistanceKind::Angular),
            DistanceName::Hybrid => Ok(DistanceKind::Hybrid {
                alpha: self
                    .alpha
                    .ok_or_else(|| invalid("aggregator.alpha", "required for hybrid distance"))?,
            }),
        }
    }

    pub fn regulation_kind(&self) -> RegulationKind {
        match self.regulation.unwrap_or(RegulationName::Reciprocal) {
            RegulationName::Reciprocal => RegulationKind::Reciprocal,
            RegulationName::NegLog => RegulationKind::NegLog,
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or(1e-6)
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iter.unwrap_or(100)
    }
}

/// Fully resolved description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseName,
    pub master_seed: u64,
    pub rounds: u32,
    pub clients_per_round: f64,
    pub server_eta: f64,
    pub validation_fraction: f64,
    pub metrics: BTreeSet<Metric>,
    pub model: ModelConfig,
    pub train: TrainParams,
    pub data: DataConfig,
    pub partition: PartitionConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    pub aggregator: AggregatorConfig,
}

/// Partial config as written in a file: any missing key falls back to the
/// case preset.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub case: Option<CaseName>,
    pub master_seed: Option<u64>,
    pub rounds: Option<u32>,
    pub clients_per_round: Option<f64>,
    pub server_eta: Option<f64>,
    pub validation_fraction: Option<f64>,
    pub metrics: Option<BTreeSet<Metric>>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainParams>,
    pub data: Option<DataConfig>,
    pub partition: Option<PartitionConfig>,
    pub attack: Option<AttackConfig>,
    pub aggregator: Option<AggregatorConfig>,
}

/// Command-line overrides; these beat both the file and the preset.
#[derive(Debug, Clone, Copy, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub rounds: Option<u32>,
    pub case: Option<CaseName>,
}

fn boost_attack(ids: &[usize]) -> AttackConfig {
    AttackConfig {
        kind: AttackKindName::Boost,
        attacker_ids: ids.to_vec(),
        factor: Some(10.0),
        sigma: None,
    }
}

/// The desk-scale preset behind every case: 8 clients, 10 rounds, a
/// linear classifier on 10-class synthetic blobs, FedTruth aggregation
/// with Euclidean distance and reciprocal regulation, all four metrics.
pub fn preset(case: CaseName) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        case,
        master_seed: 42,
        rounds: 10,
        clients_per_round: 1.0,
        server_eta: 1.0,
        validation_fraction: 0.2,
        metrics: [Metric::Aw, Metric::Net, Metric::Sv, Metric::Loo]
            .into_iter()
            .collect(),
        model: ModelConfig {
            kind: ModelKindName::Linear,
            hidden_units: None,
            input_dim: 16,
            num_classes: 10,
        },
        train: TrainParams {
            local_epochs: 10,
            batch_size: 64,
            learning_rate: 0.001,
        },
        data: DataConfig {
            source: DataSourceName::Synthetic,
            num_classes: Some(10),
            input_dim: Some(16),
            cluster_spread: Some(0.3),
            samples: Some(2000),
            images: None,
            labels: None,
        },
        partition: PartitionConfig {
            scheme: SchemeName::Iid,
            label_counts: None,
            clients: 8,
            samples_per_client: 40,
        },
        attack: None,
        aggregator: AggregatorConfig {
            kind: AggregatorKindName::Fedtruth,
            distance: Some(DistanceName::Euclidean),
            alpha: None,
            regulation: Some(RegulationName::Reciprocal),
            tol: Some(1e-6),
            max_iter: Some(100),
        },
    };
    match case {
        CaseName::Case1 => {
            cfg.partition.scheme = SchemeName::LabelsPerClient;
            cfg.partition.label_counts = Some(vec![1, 2, 3, 4, 6, 8, 9, 10]);
        }
        CaseName::Case2 => {
            cfg.partition.scheme = SchemeName::LabelsPerClient;
            cfg.partition.label_counts = Some(vec![1, 1, 1, 1, 1, 1, 2, 2]);
        }
        CaseName::Case3 => cfg.attack = Some(boost_attack(&[7])),
        CaseName::Case4 => cfg.attack = Some(boost_attack(&[6, 7])),
        CaseName::Case5 => cfg.attack = Some(boost_attack(&[5, 6, 7])),
        CaseName::Custom => {}
    }
    cfg
}

/// Overlays file keys and CLI flags on the case preset and validates the
/// result.
pub fn resolve(
    file: ConfigFile,
    overrides: &CliOverrides,
) -> Result<ExperimentConfig, ConfigError> {
    let case = overrides.case.or(file.case).unwrap_or(CaseName::Custom);
    let mut cfg = preset(case);

    if let Some(v) = file.master_seed {
        cfg.master_seed = v;
    }
    if let Some(v) = file.rounds {
        cfg.rounds = v;
    }
    if let Some(v) = file.clients_per_round {
        cfg.clients_per_round = v;
    }
    if let Some(v) = file.server_eta {
        cfg.server_eta = v;
    }
    if let Some(v) = file.validation_fraction {
        cfg.validation_fraction = v;
    }
    if let Some(v) = file.metrics {
        cfg.metrics = v;
    }
    if let Some(v) = file.model {
        cfg.model = v;
    }
    if let Some(v) = file.train {
        cfg.train = v;
    }
    if let Some(v) = file.data {
        cfg.data = v;
    }
    if let Some(v) = file.partition {
        cfg.partition = v;
    }
    if file.attack.is_some() {
        cfg.attack = file.attack;
    }
    if let Some(v) = file.aggregator {
        cfg.aggregator = v;
    }

    if let Some(seed) = overrides.seed {
        cfg.master_seed = seed;
    }
    if let Some(rounds) = overrides.rounds {
        cfg.rounds = rounds;
    }

    // Normalize fedtruth defaults so the echoed config is explicit.
    if cfg.aggregator.kind == AggregatorKindName::Fedtruth {
        cfg.aggregator.distance = Some(cfg.aggregator.distance.unwrap_or(DistanceName::Euclidean));
        cfg.aggregator.regulation = Some(
            cfg.aggregator
                .regulation
                .unwrap_or(RegulationName::Reciprocal),
        );
        cfg.aggregator.tol = Some(cfg.aggregator.tolerance());
        cfg.aggregator.max_iter = Some(cfg.aggregator.max_iterations());
    }

    validate(&cfg)?;
    Ok(cfg)
}

/// Semantic validation of a resolved config; errors name the key path.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    if cfg.rounds == 0 {
        return Err(invalid("rounds", "must be at least 1"));
    }
    if !(cfg.clients_per_round > 0.0 && cfg.clients_per_round <= 1.0) {
        return Err(invalid("clients_per_round", "must be in (0, 1]"));
    }
    if !cfg.server_eta.is_finite() {
        return Err(invalid("server_eta", "must be finite"));
    }
    if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
        return Err(invalid("validation_fraction", "must be in (0, 1)"));
    }

    let spec = cfg.model.to_spec()?;

    if cfg.train.local_epochs == 0 {
        return Err(invalid("train.local_epochs", "must be at least 1"));
    }
    if cfg.train.batch_size == 0 {
        return Err(invalid("train.batch_size", "must be at least 1"));
    }
    if !(cfg.train.learning_rate > 0.0 && cfg.train.learning_rate.is_finite()) {
        return Err(invalid(
            "train.learning_rate",
            "must be positive and finite",
        ));
    }

    let synthetic_classes = match cfg.data.source {
        DataSourceName::Synthetic => {
            for (key, present) in [
                ("data.images", cfg.data.images.is_some()),
                ("data.labels", cfg.data.labels.is_some()),
            ] {
                if present {
                    return Err(invalid(key, "only valid for source = \"idx\""));
                }
            }
            let synthetic = cfg.data.to_synthetic_spec(0)?;
            if synthetic.num_classes < 2 {
                return Err(invalid("data.num_classes", "must be at least 2"));
            }
            if synthetic.samples == 0 {
                return Err(invalid("data.samples", "must be positive"));
            }
            if !(synthetic.cluster_spread.is_finite() && synthetic.cluster_spread >= 0.0) {
                return Err(invalid("data.cluster_spread", "must be finite and >= 0"));
            }
            if synthetic.input_dim != spec.input_dim {
                return Err(invalid(
                    "data.input_dim",
                    format!(
                        "is {} but model.input_dim is {}",
                        synthetic.input_dim, spec.input_dim
                    ),
                ));
            }
            if synthetic.num_classes != spec.num_classes {
                return Err(invalid(
                    "data.num_classes",
                    format!(
                        "is {} but model.num_classes is {}",
                        synthetic.num_classes, spec.num_classes
                    ),
                ));
            }
            Some(synthetic.num_classes)
        }
        DataSourceName::Idx => {
            for (key, present) in [
                ("data.num_classes", cfg.data.num_classes.is_some()),
                ("data.input_dim", cfg.data.input_dim.is_some()),
                ("data.cluster_spread", cfg.data.cluster_spread.is_some()),
                ("data.samples", cfg.data.samples.is_some()),
            ] {
                if present {
                    return Err(invalid(key, "only valid for source = \"synthetic\""));
                }
            }
            if cfg.data.images.is_none() {
                return Err(invalid("data.images", "required for idx data"));
            }
            if cfg.data.labels.is_none() {
                return Err(invalid("data.labels", "required for idx data"));
            }
            None
        }
    };

    if cfg.partition.clients == 0 {
        return Err(invalid("partition.clients", "must be at least 1"));
    }
    let per_round = (cfg.clients_per_round * cfg.partition.clients as f64).ceil() as usize;
    if cfg.metrics.contains(&Metric::Sv) && per_round > crate::contribution::DEFAULT_SHAPLEY_CAP {
        return Err(invalid(
            "metrics",
            format!(
                "sv enumerates 2^n coalitions; at most {} clients per round, got {per_round}",
                crate::contribution::DEFAULT_SHAPLEY_CAP
            ),
        ));
    }
    if cfg.partition.samples_per_client == 0 {
        return Err(invalid(
            "partition.samples_per_client",
            "must be at least 1",
        ));
    }
    match cfg.partition.scheme {
        SchemeName::Iid => {
            if cfg.partition.label_counts.is_some() {
                return Err(invalid(
                    "partition.label_counts",
                    "only valid for scheme = \"labels_per_client\"",
                ));
            }
        }
        SchemeName::LabelsPerClient => {
            let counts = cfg
                .partition
                .label_counts
                .as_ref()
                .ok_or_else(|| invalid("partition.label_counts", "required for this scheme"))?;
            if counts.len() != cfg.partition.clients {
                return Err(invalid(
                    "partition.label_counts",
                    format!(
                        "has {} entries for {} clients",
                        counts.len(),
                        cfg.partition.clients
                    ),
                ));
            }
            if counts.contains(&0) {
                return Err(invalid(
                    "partition.label_counts",
                    "entries must be positive",
                ));
            }
            if let Some(classes) = synthetic_classes {
                if counts.iter().any(|&c| c > classes) {
                    return Err(invalid(
                        "partition.label_counts",
                        format!("entries must be <= {classes} labels"),
                    ));
                }
                if counts.iter().sum::<usize>() < classes {
                    return Err(invalid(
                        "partition.label_counts",
                        format!("must sum to at least {classes} to cover every label"),
                    ));
                }
            }
        }
    }

    if let Some(attack) = &cfg.attack {
        if attack.attacker_ids.is_empty() {
            return Err(invalid("attack.attacker_ids", "must not be empty"));
        }
        let distinct: BTreeSet<usize> = attack.attacker_ids.iter().copied().collect();
        if distinct.len() != attack.attacker_ids.len() {
            return Err(invalid("attack.attacker_ids", "contains duplicates"));
        }
        if let Some(&bad) = attack
            .attacker_ids
            .iter()
            .find(|&&id| id >= cfg.partition.clients)
        {
            return Err(invalid(
                "attack.attacker_ids",
                format!("client {bad} is outside 0..{}", cfg.partition.clients),
            ));
        }
        match attack.kind {
            AttackKindName::Boost => {
                if attack.sigma.is_some() {
                    return Err(invalid("attack.sigma", "only valid for gaussian attacks"));
                }
                let factor = attack
                    .factor
                    .ok_or_else(|| invalid("attack.factor", "required for boost attacks"))?;
                if !(factor.is_finite() && factor > 0.0) {
                    return Err(invalid("attack.factor", "must be positive and finite"));
                }
            }
            AttackKindName::Gaussian => {
                if attack.factor.is_some() {
                    return Err(invalid("attack.factor", "only valid for boost attacks"));
                }
                let sigma = attack
                    .sigma
                    .ok_or_else(|| invalid("attack.sigma", "required for gaussian attacks"))?;
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(invalid("attack.sigma", "must be finite and >= 0"));
                }
            }
        }
    }

    match cfg.aggregator.kind {
        AggregatorKindName::Fedavg => {
            for (key, present) in [
                ("aggregator.distance", cfg.aggregator.distance.is_some()),
                ("aggregator.alpha", cfg.aggregator.alpha.is_some()),
                ("aggregator.regulation", cfg.aggregator.regulation.is_some()),
                ("aggregator.tol", cfg.aggregator.tol.is_some()),
                ("aggregator.max_iter", cfg.aggregator.max_iter.is_some()),
            ] {
                if present {
                    return Err(invalid(key, "only valid for kind = \"fedtruth\""));
                }
            }
            if cfg.metrics.contains(&Metric::Aw) || cfg.metrics.contains(&Metric::Net) {
                return Err(invalid(
                    "metrics",
                    "aw and net come from the fedtruth aggregator; use kind = \"fedtruth\"",
                ));
            }
        }
        AggregatorKindName::Fedtruth => {
            match cfg.aggregator.distance.unwrap_or(DistanceName::Euclidean) {
                DistanceName::Hybrid => {
                    let alpha = cfg.aggregator.alpha.ok_or_else(|| {
                        invalid("aggregator.alpha", "required for hybrid distance")
                    })?;
                    if !(0.0..=1.0).contains(&alpha) {
                        return Err(invalid("aggregator.alpha", "must be in [0, 1]"));
                    }
                }
                _ => {
                    if cfg.aggregator.alpha.is_some() {
                        return Err(invalid(
                            "aggregator.alpha",
                            "only valid for distance = \"hybrid\"",
                        ));
                    }
                }
            }
            let tol = cfg.aggregator.tolerance();
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(invalid("aggregator.tol", "must be positive and finite"));
            }
            if cfg.aggregator.max_iterations() == 0 {
                return Err(invalid("aggregator.max_iter", "must be at least 1"));
            }
        }
    }

    Ok(())
}

/// Parses and resolves a config file with no CLI overrides.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with_overrides(path, &CliOverrides::default())
}

pub fn parse_config_with_overrides(
    path: &Path,
    overrides: &CliOverrides,
) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, overrides).map_err(|e| match e {
        ConfigError::Parse { message, .. } => ConfigError::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

/// Parses config text; parse errors carry the TOML line/column.
pub fn parse_config_str(
    text: &str,
    overrides: &CliOverrides,
) -> Result<ExperimentConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: "<config>".to_string(),
        message: e.to_string(),
    })?;
    resolve(file, overrides)
}

/// Serializes a resolved config back to TOML (the echo format).
pub fn to_toml(cfg: &ExperimentConfig) -> Result<String, ConfigError> {
    toml::to_string_pretty(cfg).map_err(|e| ConfigError::Serialize(e.to_string()))
}
