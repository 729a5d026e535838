//! The federated round loop: client selection, local training, attack
//! injection, aggregation, the server step, and per-round contribution
//! metrics, all driven by one master seed.
//!
//! Every source of randomness is a derived stream (see [`crate::seed`]),
//! so a given [`ExperimentConfig`] always produces byte-identical
//! reports. Within a round all metrics are computed from the same frozen
//! set of (post-attack) updates.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregation::{fedavg, fedtruth, DistanceKind, FedTruthResult, RegulationKind};
use crate::attacks::{apply_attacks, AttackError, AttackSpec};
use crate::config::{AggregatorKindName, ConfigError, DataSourceName, ExperimentConfig, Metric};
use crate::contribution::{
    average_across_rounds, freca_aw, gap_distance, loo, loss_share, net_contribution,
    normalize_scores, shapley, ClientMetrics, ContributionError, ContributionReport, ScalingMethod,
    UtilityOracle, DEFAULT_SHAPLEY_CAP,
};
use crate::data::{generate_blobs, load_idx, partition, DataError};
use crate::model::{
    apply_server_step, initial_params, local_train, LabeledDataset, ModelError, ModelSpec,
    TrainConfig,
};
use crate::params::ParamVector;
use crate::seed::{self, Domain};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("round {round}: {source}")]
    InRound {
        round: u32,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aggregation(#[from] crate::aggregation::AggregationError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Contribution(#[from] ContributionError),
    #[error("empty client pool")]
    EmptyPool,
    #[error("selection fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("validation split is empty but sv/loo need validation data")]
    EmptyValidation,
    #[error("idx data has input dim {data} but the model expects {model}")]
    IdxDimMismatch { data: usize, model: usize },
    #[error("idx data contains label {label} but the model has {num_classes} classes")]
    IdxLabelOutOfRange { label: usize, num_classes: usize },
}

/// Everything recorded about one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub selected: Vec<usize>,
    /// L2 norm of each (post-attack) update delta, keyed by client.
    pub updates_digest: BTreeMap<usize, f64>,
    pub fedtruth: Option<FedTruthResult>,
    pub contribution: ContributionReport,
    /// SHA-256 of the post-step global model bytes.
    pub global_model_hash: String,
}

/// Deterministic experiment output: per-round records plus cross-round
/// averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundRecord>,
    pub averages: BTreeMap<usize, ClientMetrics>,
}

/// Utility evaluations spent per metric family in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundEvalCounts {
    pub round: u32,
    pub sv: u64,
    pub loo: u64,
    pub freca: u64,
}

/// Accumulated wall-clock time per metric family across the run.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricTimings {
    pub freca: Duration,
    pub sv: Duration,
    pub loo: Duration,
}

/// Report plus run instrumentation (evaluation counters and timings).
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub round_eval_counts: Vec<RoundEvalCounts>,
    pub timings: MetricTimings,
}

/// Client datasets and the validation split, both disjoint.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub clients: Vec<LabeledDataset>,
    pub validation: LabeledDataset,
}

/// Draws `ceil(fraction * pool)` ids without replacement from a stream
/// keyed by `(seed, round)`, returned sorted ascending.
pub fn select_clients(
    pool: &[usize],
    fraction: f64,
    round: u32,
    seed: u64,
) -> Result<Vec<usize>, ExperimentError> {
    if pool.is_empty() {
        return Err(ExperimentError::EmptyPool);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ExperimentError::InvalidFraction(fraction));
    }
    let take = (fraction * pool.len() as f64).ceil() as usize;
    let mut ids = pool.to_vec();
    use rand::seq::SliceRandom;
    ids.shuffle(&mut seed::stream(seed, Domain::Selection, &[round as u64]));
    ids.truncate(take);
    ids.sort_unstable();
    Ok(ids)
}

fn hash_params(params: &ParamVector) -> String {
    let mut hasher = Sha256::new();
    for value in params.iter() {
        hasher.update(value.to_le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the source dataset, carves off the validation split (stratified
/// per label, before partitioning), and partitions the rest.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, ExperimentError> {
    let spec = cfg.model.to_spec()?;
    let source = match cfg.data.source {
        DataSourceName::Synthetic => {
            let synthetic = cfg.data.to_synthetic_spec(seed::derive_seed(
                cfg.master_seed,
                Domain::DataGen,
                &[],
            ))?;
            generate_blobs(&synthetic)?
        }
        DataSourceName::Idx => {
            let images = cfg.data.images.as_ref().expect("validated");
            let labels = cfg.data.labels.as_ref().expect("validated");
            let data = load_idx(images.as_ref(), labels.as_ref())?;
            if data.input_dim() != spec.input_dim {
                return Err(ExperimentError::IdxDimMismatch {
                    data: data.input_dim(),
                    model: spec.input_dim,
                });
            }
            if let Some(&label) = data.labels().iter().find(|&&l| l >= spec.num_classes) {
                return Err(ExperimentError::IdxLabelOutOfRange {
                    label,
                    num_classes: spec.num_classes,
                });
            }
            data
        }
    };

    let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (index, &label) in source.labels().iter().enumerate() {
        pools.entry(label).or_default().push(index);
    }
    let mut validation_indices = Vec::new();
    let mut train_indices = Vec::new();
    for (&label, pool) in pools.iter_mut() {
        use rand::seq::SliceRandom;
        pool.shuffle(&mut seed::stream(
            cfg.master_seed,
            Domain::ValidationSplit,
            &[label as u64],
        ));
        let take = (cfg.validation_fraction * pool.len() as f64).floor() as usize;
        validation_indices.extend_from_slice(&pool[..take]);
        train_indices.extend_from_slice(&pool[take..]);
    }
    validation_indices.sort_unstable();
    train_indices.sort_unstable();

    let validation = source.subset(&validation_indices);
    let train = source.subset(&train_indices);
    let partition_spec = cfg.partition.to_partition_spec(seed::derive_seed(
        cfg.master_seed,
        Domain::Partition,
        &[],
    ))?;
    let clients = partition(&train, &partition_spec)?;

    let needs_validation = cfg.metrics.contains(&Metric::Sv) || cfg.metrics.contains(&Metric::Loo);
    if needs_validation && validation.n_samples() == 0 {
        return Err(ExperimentError::EmptyValidation);
    }

    Ok(PreparedData {
        clients,
        validation,
    })
}

enum Aggregator {
    FedAvg,
    FedTruth {
        dist: DistanceKind,
        reg: RegulationKind,
        tol: f64,
        max_iter: usize,
    },
}

struct Experiment {
    cfg: ExperimentConfig,
    spec: ModelSpec,
    aggregator: Aggregator,
    attack: Option<AttackSpec>,
    clients: Vec<LabeledDataset>,
    validation: LabeledDataset,
}

struct RoundOutput {
    record: RoundRecord,
    new_global: ParamVector,
    counts: RoundEvalCounts,
    timings: MetricTimings,
}

impl Experiment {
    fn new(cfg: ExperimentConfig) -> Result<Self, ExperimentError> {
        crate::config::validate(&cfg)?;
        let spec = cfg.model.to_spec()?;
        let prepared = prepare_data(&cfg)?;
        let aggregator = match cfg.aggregator.kind {
            AggregatorKindName::Fedavg => Aggregator::FedAvg,
            AggregatorKindName::Fedtruth => Aggregator::FedTruth {
                dist: cfg.aggregator.distance_kind()?,
                reg: cfg.aggregator.regulation_kind(),
                tol: cfg.aggregator.tolerance(),
                max_iter: cfg.aggregator.max_iterations(),
            },
        };
        let attack = cfg
            .attack
            .as_ref()
            .map(|a| a.to_attack_spec(seed::derive_seed(cfg.master_seed, Domain::Attack, &[])))
            .transpose()?;
        Ok(Self {
            cfg,
            spec,
            aggregator,
            attack,
            clients: prepared.clients,
            validation: prepared.validation,
        })
    }

    fn run_round(&self, global: &ParamVector, round: u32) -> Result<RoundOutput, ExperimentError> {
        let pool: Vec<usize> = (0..self.cfg.partition.clients).collect();
        let selected = select_clients(
            &pool,
            self.cfg.clients_per_round,
            round,
            self.cfg.master_seed,
        )?;

        let mut updates = Vec::with_capacity(selected.len());
        for &client in &selected {
            let train_cfg = TrainConfig {
                local_epochs: self.cfg.train.local_epochs,
                batch_size: self.cfg.train.batch_size,
                learning_rate: self.cfg.train.learning_rate,
                seed: seed::derive_seed(
                    self.cfg.master_seed,
                    Domain::Training,
                    &[client as u64, round as u64],
                ),
            };
            updates.push(local_train(
                &self.spec,
                global,
                &self.clients[client],
                &train_cfg,
                client,
            )?);
        }

        // Attackers that were not selected this round simply sit it out.
        let updates = match &self.attack {
            Some(spec) => {
                let present: std::collections::BTreeSet<usize> = spec
                    .attacker_ids
                    .iter()
                    .copied()
                    .filter(|id| selected.contains(id))
                    .collect();
                if present.is_empty() {
                    updates
                } else {
                    let round_spec = AttackSpec {
                        attacker_ids: present,
                        kind: spec.kind,
                        seed: spec.seed,
                    };
                    apply_attacks(&updates, &round_spec, round)?
                }
            }
            None => updates,
        };

        let updates_digest: BTreeMap<usize, f64> = updates
            .iter()
            .map(|u| (u.client_id, u.delta.norm()))
            .collect();

        let (global_delta, fedtruth_result) = match &self.aggregator {
            Aggregator::FedAvg => {
                let (aggregate, _) = fedavg(&updates)?;
                (aggregate, None)
            }
            Aggregator::FedTruth {
                dist,
                reg,
                tol,
                max_iter,
            } => {
                let result = fedtruth(&updates, *dist, *reg, *tol, *max_iter)?;
                (result.truth.clone(), Some(result))
            }
        };
        let new_global = apply_server_step(global, &global_delta, self.cfg.server_eta)?;

        let mut per_client: BTreeMap<usize, ClientMetrics> = updates
            .iter()
            .map(|u| (u.client_id, ClientMetrics::default()))
            .collect();
        let mut counts = RoundEvalCounts {
            round,
            sv: 0,
            loo: 0,
            freca: 0,
        };
        let mut timings = MetricTimings::default();

        let want_aw = self.cfg.metrics.contains(&Metric::Aw);
        let want_net = self.cfg.metrics.contains(&Metric::Net);
        if want_aw || want_net {
            let result = fedtruth_result
                .as_ref()
                .expect("config validation ties aw/net to the fedtruth aggregator");
            let (dist, reg) = match &self.aggregator {
                Aggregator::FedTruth { dist, reg, .. } => (*dist, *reg),
                Aggregator::FedAvg => unreachable!("validated"),
            };
            let started = Instant::now();
            if want_aw {
                for (update, weight) in updates.iter().zip(freca_aw(result)) {
                    per_client.get_mut(&update.client_id).expect("present").aw = Some(weight);
                }
            }
            if want_net {
                let (_, gaps) = gap_distance(&updates, result, dist, reg)?;
                let shares = loss_share(&gaps)?;
                let net = net_contribution(&shares)?;
                for ((update, share), value) in updates.iter().zip(shares).zip(net) {
                    let entry = per_client.get_mut(&update.client_id).expect("present");
                    entry.gap_share = Some(share);
                    entry.net = Some(value);
                }
            }
            timings.freca += started.elapsed();
        }

        if self.cfg.metrics.contains(&Metric::Sv) {
            let started = Instant::now();
            let oracle = UtilityOracle::new(
                &self.spec,
                global,
                self.cfg.server_eta,
                &self.validation,
                &updates,
            );
            let raw = shapley(&oracle, DEFAULT_SHAPLEY_CAP)?;
            let minmax = normalize_scores(&raw, ScalingMethod::MinMax)?;
            let softmax = normalize_scores(&raw, ScalingMethod::Softmax)?;
            for (((update, raw), mm), sm) in updates.iter().zip(raw).zip(minmax).zip(softmax) {
                let entry = per_client.get_mut(&update.client_id).expect("present");
                entry.sv_raw = Some(raw);
                entry.sv_minmax = Some(mm);
                entry.sv_softmax = Some(sm);
            }
            counts.sv = oracle.eval_count();
            timings.sv += started.elapsed();
        }

        if self.cfg.metrics.contains(&Metric::Loo) {
            let started = Instant::now();
            let oracle = UtilityOracle::new(
                &self.spec,
                global,
                self.cfg.server_eta,
                &self.validation,
                &updates,
            );
            let raw = loo(&oracle)?;
            let minmax = normalize_scores(&raw, ScalingMethod::MinMax)?;
            let softmax = normalize_scores(&raw, ScalingMethod::Softmax)?;
            for (((update, raw), mm), sm) in updates.iter().zip(raw).zip(minmax).zip(softmax) {
                let entry = per_client.get_mut(&update.client_id).expect("present");
                entry.loo_raw = Some(raw);
                entry.loo_minmax = Some(mm);
                entry.loo_softmax = Some(sm);
            }
            counts.loo = oracle.eval_count();
            timings.loo += started.elapsed();
        }

        let record = RoundRecord {
            round,
            selected,
            updates_digest,
            fedtruth: fedtruth_result,
            contribution: ContributionReport { round, per_client },
            global_model_hash: hash_params(&new_global),
        };
        Ok(RoundOutput {
            record,
            new_global,
            counts,
            timings,
        })
    }

    fn run(&self) -> Result<ExperimentOutcome, ExperimentError> {
        let mut global = initial_params(&self.spec, self.cfg.master_seed);
        let mut rounds = Vec::with_capacity(self.cfg.rounds as usize);
        let mut round_eval_counts = Vec::with_capacity(self.cfg.rounds as usize);
        let mut timings = MetricTimings::default();

        for round in 0..self.cfg.rounds {
            let output =
                self.run_round(&global, round)
                    .map_err(|source| ExperimentError::InRound {
                        round,
                        source: Box::new(source),
                    })?;
            global = output.new_global;
            rounds.push(output.record);
            round_eval_counts.push(output.counts);
            timings.freca += output.timings.freca;
            timings.sv += output.timings.sv;
            timings.loo += output.timings.loo;
        }

        let contributions: Vec<ContributionReport> =
            rounds.iter().map(|r| r.contribution.clone()).collect();
        let averages = average_across_rounds(&contributions)?;

        Ok(ExperimentOutcome {
            report: ExperimentReport {
                schema_version: 1,
                config: self.cfg.clone(),
                rounds,
                averages,
            },
            round_eval_counts,
            timings,
        })
    }
}

/// Runs the configured experiment end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    Experiment::new(cfg.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{preset, CaseName};

    #[test]
    fn selection_examples() {
        let pool: Vec<usize> = (0..8).collect();
        assert_eq!(select_clients(&pool, 1.0, 0, 42).unwrap(), pool);
        assert_eq!(select_clients(&pool, 0.5, 3, 42).unwrap().len(), 4);
        assert_eq!(
            select_clients(&pool, 0.5, 3, 42).unwrap(),
            select_clients(&pool, 0.5, 3, 42).unwrap()
        );
        assert!(matches!(
            select_clients(&[], 1.0, 0, 42),
            Err(ExperimentError::EmptyPool)
        ));
        assert!(matches!(
            select_clients(&pool, 0.0, 0, 42),
            Err(ExperimentError::InvalidFraction(_))
        ));
    }

    #[test]
    fn selection_is_sorted_and_sized() {
        let pool: Vec<usize> = (0..10).collect();
        for round in 0..20 {
            let picked = select_clients(&pool, 0.3, round, 7).unwrap();
            assert_eq!(picked.len(), 3);
            assert!(picked.windows(2).all(|w| w[0] < w[1]));
        }
    }

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = preset(CaseName::Case3);
        cfg.rounds = 2;
        cfg.data.samples = Some(600);
        cfg.partition.samples_per_client = 20;
        cfg
    }

    #[test]
    fn symmetric_clients_get_equal_aw() {
        // All clients share one dataset small enough for full-batch
        // training, so per-client shuffle seeds cannot matter: updates
        // coincide and the aggregation weights must be uniform.
        let mut cfg = preset(CaseName::Custom);
        cfg.metrics = [Metric::Aw, Metric::Net].into_iter().collect();
        cfg.rounds = 1;
        cfg.data.samples = Some(40);
        let spec = cfg.model.to_spec().unwrap();
        let shared = generate_blobs(
            &cfg.data
                .to_synthetic_spec(seed::derive_seed(cfg.master_seed, Domain::DataGen, &[]))
                .unwrap(),
        )
        .unwrap();
        let experiment = Experiment {
            spec,
            aggregator: Aggregator::FedTruth {
                dist: DistanceKind::Euclidean,
                reg: RegulationKind::Reciprocal,
                tol: 1e-6,
                max_iter: 100,
            },
            attack: None,
            clients: vec![shared.clone(); cfg.partition.clients],
            validation: shared,
            cfg,
        };
        let global = initial_params(&experiment.spec, 42);
        let output = experiment.run_round(&global, 0).unwrap();
        let aws: Vec<f64> = output
            .record
            .contribution
            .per_client
            .values()
            .map(|m| m.aw.unwrap())
            .collect();
        for w in &aws {
            assert!((w - 0.125).abs() < 1e-6, "{aws:?}");
        }
        assert_eq!(output.counts.sv, 0);
        assert_eq!(output.counts.loo, 0);
    }

    #[test]
    fn freca_only_metrics_touch_no_validation_data() {
        let mut cfg = tiny_config();
        cfg.metrics = [Metric::Aw, Metric::Net].into_iter().collect();
        let outcome = run_experiment(&cfg).unwrap();
        for counts in &outcome.round_eval_counts {
            assert_eq!(counts.sv, 0);
            assert_eq!(counts.loo, 0);
            assert_eq!(counts.freca, 0);
        }
    }

    #[test]
    fn case3_round_records_cover_all_clients() {
        let cfg = tiny_config();
        let outcome = run_experiment(&cfg).unwrap();
        for record in &outcome.report.rounds {
            assert_eq!(record.contribution.per_client.len(), 8);
            assert!(record.contribution.per_client.contains_key(&7));
            assert_eq!(record.selected, (0..8).collect::<Vec<_>>());
            // Per-round metric invariants: aw, gap shares, and net each
            // sum to 1; scaled scores stay in [0, 1].
            let metrics: Vec<&ClientMetrics> = record.contribution.per_client.values().collect();
            for pick in [
                |m: &ClientMetrics| m.aw,
                |m: &ClientMetrics| m.gap_share,
                |m: &ClientMetrics| m.net,
            ] {
                let total: f64 = metrics.iter().map(|m| pick(m).unwrap()).sum();
                assert!((total - 1.0).abs() <= 1e-9, "sum {total}");
            }
            for m in &metrics {
                for scaled in [m.sv_minmax, m.sv_softmax, m.loo_minmax, m.loo_softmax] {
                    let v = scaled.unwrap();
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
        // n = 8 clients: 2^8 Shapley evaluations, n + 1 for LOO.
        for counts in &outcome.round_eval_counts {
            assert_eq!(counts.sv, 256);
            assert_eq!(counts.loo, 9);
        }
    }

    #[test]
    fn single_round_averages_equal_round_values() {
        let mut cfg = tiny_config();
        cfg.rounds = 1;
        let outcome = run_experiment(&cfg).unwrap();
        let round = &outcome.report.rounds[0].contribution.per_client;
        for (client, averaged) in &outcome.report.averages {
            assert_eq!(averaged, &round[client]);
        }
    }

    #[test]
    fn experiment_is_bit_deterministic() {
        let cfg = tiny_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.round_eval_counts, b.round_eval_counts);
    }

    #[test]
    fn global_model_hash_changes_each_round() {
        let cfg = tiny_config();
        let outcome = run_experiment(&cfg).unwrap();
        let hashes: Vec<&str> = outcome
            .report
            .rounds
            .iter()
            .map(|r| r.global_model_hash.as_str())
            .collect();
        for i in 1..hashes.len() {
            assert_ne!(hashes[i], hashes[i - 1]);
        }
    }

    #[test]
    fn validation_split_is_disjoint_from_clients() {
        let cfg = tiny_config();
        let prepared = prepare_data(&cfg).unwrap();
        let val_rows: Vec<&[f64]> = (0..prepared.validation.n_samples())
            .map(|i| prepared.validation.feature_row(i))
            .collect();
        for client in &prepared.clients {
            for i in 0..client.n_samples() {
                assert!(!val_rows.contains(&client.feature_row(i)));
            }
        }
    }
}
