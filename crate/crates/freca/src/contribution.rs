//! Per-client contribution metrics for one round: the FRECA pair
//! (aggregation weight and net contribution, both free of any validation
//! data) and the utility-based baselines (exact Shapley value and
//! leave-one-out), plus score scaling and cross-round averaging.
//!
//! The FRECA net contribution follows from the round's gap distance: each
//! client's weighted distance to the converged truth yields its loss
//! share, and contributions are the inverse-proportional allocation over
//! those shares (`C_k * l_k` constant, sum of C = 1).

use std::cell::Cell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{fedavg, DistanceKind, FedTruthResult, ModelUpdate, RegulationKind};
use crate::model::{apply_server_step, evaluate_accuracy, LabeledDataset, ModelError, ModelSpec};
use crate::params::ParamVector;

/// Exact Shapley enumeration is capped at this coalition size by default.
pub const DEFAULT_SHAPLEY_CAP: usize = 12;

/// Floor applied to loss shares before inversion, so a zero-gap client
/// cannot absorb the whole contribution mass.
pub const SHARE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ContributionError {
    #[error("no updates to score")]
    EmptyUpdates,
    #[error("{n} clients exceed the exact-Shapley cap of {cap}")]
    OverCap { n: usize, cap: usize },
    #[error("negative gap entry at index {0}")]
    NegativeGap(usize),
    #[error("negative share at index {0}")]
    NegativeShare(usize),
    #[error("shares sum to {0}, expected 1")]
    ShareSumViolation(f64),
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("no reports to average")]
    NoReports,
    #[error(transparent)]
    Aggregation(#[from] crate::aggregation::AggregationError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// All metrics for one client in one round; entries not requested by the
/// experiment stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub aw: Option<f64>,
    pub gap_share: Option<f64>,
    pub net: Option<f64>,
    pub sv_raw: Option<f64>,
    pub sv_minmax: Option<f64>,
    pub sv_softmax: Option<f64>,
    pub loo_raw: Option<f64>,
    pub loo_minmax: Option<f64>,
    pub loo_softmax: Option<f64>,
}

/// Per-round contribution table, keyed by client id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub round: u32,
    pub per_client: BTreeMap<usize, ClientMetrics>,
}

/// The FRECA client-performance metric: the converged aggregation weights,
/// unchanged.
pub fn freca_aw(result: &FedTruthResult) -> Vec<f64> {
    result.weights.clone()
}

/// Gap distance of the round: per client `g(p_k) * d(delta_k, truth)` and
/// the total over all clients. Inputs must be the same updates and
/// distance/regulation choices as the producing FedTruth run.
pub fn gap_distance(
    updates: &[ModelUpdate],
    result: &FedTruthResult,
    dist: DistanceKind,
    reg: RegulationKind,
) -> Result<(f64, Vec<f64>), ContributionError> {
    if updates.is_empty() {
        return Err(ContributionError::EmptyUpdates);
    }
    let mut per_client = Vec::with_capacity(updates.len());
    for (update, &p) in updates.iter().zip(&result.performances) {
        let d = dist.measure(&update.delta, &result.truth)?;
        per_client.push(reg.apply(p) * d);
    }
    Ok((per_client.iter().sum(), per_client))
}

/// Each client's fraction of the gap distance; uniform when every gap is
/// zero.
pub fn loss_share(per_client_gap: &[f64]) -> Result<Vec<f64>, ContributionError> {
    if per_client_gap.is_empty() {
        return Err(ContributionError::EmptyUpdates);
    }
    if let Some(i) = per_client_gap.iter().position(|&g| g < 0.0) {
        return Err(ContributionError::NegativeGap(i));
    }
    let total: f64 = per_client_gap.iter().sum();
    if total == 0.0 {
        return Ok(vec![
            1.0 / per_client_gap.len() as f64;
            per_client_gap.len()
        ]);
    }
    Ok(per_client_gap.iter().map(|g| g / total).collect())
}

/// Net contributions from loss shares: the unique solution of
/// `sum C = 1` with `l_i / l_k = C_k / C_i`, i.e. normalized reciprocals.
pub fn net_contribution(shares: &[f64]) -> Result<Vec<f64>, ContributionError> {
    if shares.is_empty() {
        return Err(ContributionError::EmptyUpdates);
    }
    if let Some(i) = shares.iter().position(|&s| s < 0.0) {
        return Err(ContributionError::NegativeShare(i));
    }
    let sum: f64 = shares.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(ContributionError::ShareSumViolation(sum));
    }
    let inverted: Vec<f64> = shares.iter().map(|&s| 1.0 / s.max(SHARE_FLOOR)).collect();
    let total: f64 = inverted.iter().sum();
    Ok(inverted.iter().map(|v| v / total).collect())
}

/// Utility of a coalition of clients, identified by a bitmask over the
/// round's update indices. Implementations may be called concurrently for
/// distinct masks; results for a fixed mask must be stable.
pub trait SubsetUtility {
    /// Number of players in the round.
    fn player_count(&self) -> usize;
    /// Utility of the coalition; mask bit `k` selects update `k`.
    fn utility(&self, mask: u64) -> Result<f64, ContributionError>;
}

/// The FL utility: accuracy on a validation set of the model obtained by
/// one server step over the FedAvg aggregate of the chosen subset, with
/// sample-count weights renormalized within the subset. The empty
/// coalition scores the base model itself. Every call is counted, which
/// grounds the efficiency comparison between metric families.
pub struct UtilityOracle<'a> {
    spec: &'a ModelSpec,
    base_model: &'a ParamVector,
    server_eta: f64,
    validation: &'a LabeledDataset,
    updates: &'a [ModelUpdate],
    evals: Cell<u64>,
}

impl<'a> UtilityOracle<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        base_model: &'a ParamVector,
        server_eta: f64,
        validation: &'a LabeledDataset,
        updates: &'a [ModelUpdate],
    ) -> Self {
        Self {
            spec,
            base_model,
            server_eta,
            validation,
            updates,
            evals: Cell::new(0),
        }
    }

    /// Number of utility evaluations performed so far.
    pub fn eval_count(&self) -> u64 {
        self.evals.get()
    }
}

impl SubsetUtility for UtilityOracle<'_> {
    fn player_count(&self) -> usize {
        self.updates.len()
    }

    fn utility(&self, mask: u64) -> Result<f64, ContributionError> {
        self.evals.set(self.evals.get() + 1);
        if mask == 0 {
            return Ok(evaluate_accuracy(
                self.spec,
                self.base_model,
                self.validation,
            )?);
        }
        let subset: Vec<ModelUpdate> = self
            .updates
            .iter()
            .enumerate()
            .filter(|(k, _)| mask & (1 << k) != 0)
            .map(|(_, u)| u.clone())
            .collect();
        let (aggregate, _) = fedavg(&subset)?;
        let stepped = apply_server_step(self.base_model, &aggregate, self.server_eta)?;
        Ok(evaluate_accuracy(self.spec, &stepped, self.validation)?)
    }
}

/// Exact Shapley values over all `2^n` coalitions:
/// `SV_k = (1/n) * sum_{S not containing k} (U(S+k) - U(S)) / C(n-1, |S|)`.
///
/// Utilities are evaluated once per subset bitmask (exactly `2^n`
/// evaluations) and memoized in a table before assembly.
pub fn shapley(oracle: &dyn SubsetUtility, cap: usize) -> Result<Vec<f64>, ContributionError> {
    let n = oracle.player_count();
    if n == 0 {
        return Err(ContributionError::EmptyUpdates);
    }
    // Bitmask enumeration needs n to fit a u64 even if a caller passes an
    // enormous cap.
    let cap = cap.min(63);
    if n > cap {
        return Err(ContributionError::OverCap { n, cap });
    }

    let table: Vec<f64> = (0..1u64 << n)
        .map(|mask| oracle.utility(mask))
        .collect::<Result<_, _>>()?;

    // Pascal's triangle row for C(n-1, s).
    let mut binom = vec![1.0f64; n];
    for s in 1..n {
        binom[s] = binom[s - 1] * (n - s) as f64 / s as f64;
    }

    let mut values = vec![0.0; n];
    for (k, value) in values.iter_mut().enumerate() {
        let bit = 1u64 << k;
        let mut acc = 0.0;
        for mask in 0..1u64 << n {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                acc += (table[(mask | bit) as usize] - table[mask as usize]) / binom[s];
            }
        }
        *value = acc / n as f64;
    }
    Ok(values)
}

/// Leave-one-out: `LOO_k = U(full) - U(full without k)`; `n + 1`
/// utility evaluations.
pub fn loo(oracle: &dyn SubsetUtility) -> Result<Vec<f64>, ContributionError> {
    let n = oracle.player_count();
    if n == 0 {
        return Err(ContributionError::EmptyUpdates);
    }
    if n > 63 {
        return Err(ContributionError::OverCap { n, cap: 63 });
    }
    let full = (1u64 << n) - 1;
    let full_utility = oracle.utility(full)?;
    (0..n)
        .map(|k| Ok(full_utility - oracle.utility(full & !(1 << k))?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMethod {
    MinMax,
    Softmax,
}

/// Scales raw scores into [0, 1]: min-max (all-equal input maps to 0.5)
/// or a max-shifted softmax.
pub fn normalize_scores(raw: &[f64], method: ScalingMethod) -> Result<Vec<f64>, ContributionError> {
    if raw.is_empty() {
        return Err(ContributionError::EmptyUpdates);
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(ContributionError::NonFiniteScore(i));
    }
    match method {
        ScalingMethod::MinMax => {
            let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if min == max {
                return Ok(vec![0.5; raw.len()]);
            }
            Ok(raw.iter().map(|v| (v - min) / (max - min)).collect())
        }
        ScalingMethod::Softmax => {
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            Ok(exps.iter().map(|e| e / sum).collect())
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Arithmetic mean of every metric per client over the rounds in which
/// that client participated.
pub fn average_across_rounds(
    reports: &[ContributionReport],
) -> Result<BTreeMap<usize, ClientMetrics>, ContributionError> {
    if reports.is_empty() {
        return Err(ContributionError::NoReports);
    }
    let mut collected: BTreeMap<usize, Vec<&ClientMetrics>> = BTreeMap::new();
    for report in reports {
        for (&client, metrics) in &report.per_client {
            collected.entry(client).or_default().push(metrics);
        }
    }
    let averaged = collected
        .into_iter()
        .map(|(client, rows)| {
            let pick = |f: fn(&ClientMetrics) -> Option<f64>| {
                mean(&rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            (
                client,
                ClientMetrics {
                    aw: pick(|r| r.aw),
                    gap_share: pick(|r| r.gap_share),
                    net: pick(|r| r.net),
                    sv_raw: pick(|r| r.sv_raw),
                    sv_minmax: pick(|r| r.sv_minmax),
                    sv_softmax: pick(|r| r.sv_softmax),
                    loo_raw: pick(|r| r.loo_raw),
                    loo_minmax: pick(|r| r.loo_minmax),
                    loo_softmax: pick(|r| r.loo_softmax),
                },
            )
        })
        .collect();
    Ok(averaged)
}
