//! Server-side aggregation: the FedAvg baseline and the FedTruth
//! truth-discovery algorithm.
//!
//! FedTruth estimates a ground-truth global update as a dynamically
//! weighted average of the client updates. Starting from uniform weights
//! it alternates three closed-form steps until the truth estimate stops
//! moving: recompute the truth as the weighted sum of updates, score each
//! update by its normalized distance from the truth, and turn those
//! scores into new weights through a decreasing regulation function.
//! Clients far from the consensus end up with near-zero weight, which is
//! what makes the aggregate robust to boosted or noisy updates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{self, weighted_sum, ParamVector, ParamsError};

/// Floor applied to performance scores before the regulation function, so
/// an update that coincides with the truth cannot produce 1/0 or -log 0.
pub const PERFORMANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("no model updates to aggregate")]
    NoUpdates,
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("update for client {client_id} has zero sample count")]
    ZeroSampleCount { client_id: usize },
    #[error("non-finite value produced at iteration {iteration}")]
    NonFinite { iteration: usize },
}

/// One client's update for one round: the delta `w_t - w_t^(k)` plus the
/// local sample count used for FedAvg weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub client_id: usize,
    pub delta: ParamVector,
    pub sample_count: usize,
}

impl ModelUpdate {
    pub fn new(
        client_id: usize,
        delta: ParamVector,
        sample_count: usize,
    ) -> Result<Self, AggregationError> {
        if sample_count == 0 {
            return Err(AggregationError::ZeroSampleCount { client_id });
        }
        Ok(Self {
            client_id,
            delta,
            sample_count,
        })
    }
}

/// Distance between an update and the estimated truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    Angular,
    Hybrid {
        alpha: f64,
    },
}

impl DistanceKind {
    /// Measures the distance, mapping a direction-free (zero-norm) input
    /// to the maximum angular distance 1: a zero update is maximally
    /// dissimilar to any direction.
    pub fn measure(&self, a: &ParamVector, b: &ParamVector) -> Result<f64, AggregationError> {
        let value = match *self {
            DistanceKind::Euclidean => params::euclidean_distance(a, b)?,
            DistanceKind::Angular => match params::angular_distance(a, b) {
                Err(ParamsError::DegenerateDirection) => 1.0,
                other => other?,
            },
            DistanceKind::Hybrid { alpha } => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(AggregationError::Params(ParamsError::AlphaOutOfRange(
                        alpha,
                    )));
                }
                let euclid = params::euclidean_distance(a, b)?;
                if alpha == 1.0 {
                    euclid
                } else {
                    let angular = match params::angular_distance(a, b) {
                        Err(ParamsError::DegenerateDirection) => 1.0,
                        other => other?,
                    };
                    alpha * euclid + (1.0 - alpha) * angular
                }
            }
        };
        Ok(value)
    }
}

/// Regulation function g mapping a performance score to an unnormalized
/// weight; must be decreasing so closer updates get larger weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegulationKind {
    /// g(p) = 1/p
    #[default]
    Reciprocal,
    /// g(p) = -log p
    NegLog,
}

impl RegulationKind {
    /// Evaluates g on a performance score, flooring the input first.
    pub fn apply(&self, p: f64) -> f64 {
        let p = p.max(PERFORMANCE_FLOOR);
        match self {
            RegulationKind::Reciprocal => 1.0 / p,
            RegulationKind::NegLog => -p.ln(),
        }
    }
}

/// Converged state of one FedTruth run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedTruthResult {
    /// Estimated ground-truth global update.
    pub truth: ParamVector,
    /// Aggregation weights of the final iteration, one per update; the
    /// FRECA AW metric.
    pub weights: Vec<f64>,
    /// Performance scores of the final iteration (normalized distances).
    pub performances: Vec<f64>,
    /// Number of truth updates performed.
    pub iterations: usize,
    /// Objective value after each iteration.
    pub objective_trace: Vec<f64>,
}

/// Snapshot of one FedTruth iteration, passed to observers.
pub struct IterationState<'a> {
    pub iteration: usize,
    pub truth: &'a ParamVector,
    pub performances: &'a [f64],
    pub weights: &'a [f64],
    pub objective: f64,
}

/// Sample-count-weighted averaging of updates.
///
/// Returns the aggregate and the weights `n_k / sum(n)` in input order.
pub fn fedavg(updates: &[ModelUpdate]) -> Result<(ParamVector, Vec<f64>), AggregationError> {
    if updates.is_empty() {
        return Err(AggregationError::NoUpdates);
    }
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    let weights: Vec<f64> = updates
        .iter()
        .map(|u| u.sample_count as f64 / total as f64)
        .collect();
    let deltas: Vec<ParamVector> = updates.iter().map(|u| u.delta.clone()).collect();
    let aggregate = weighted_sum(&deltas, &weights)?;
    Ok((aggregate, weights))
}

/// Performance of each update: its share of the total distance to the
/// truth. If every update coincides with the truth the scores are
/// uniform, bypassing the 0/0.
pub fn compute_performances(
    truth: &ParamVector,
    updates: &[ModelUpdate],
    dist: DistanceKind,
) -> Result<Vec<f64>, AggregationError> {
    if updates.is_empty() {
        return Err(AggregationError::NoUpdates);
    }
    let distances: Vec<f64> = updates
        .iter()
        .map(|u| dist.measure(truth, &u.delta))
        .collect::<Result<_, _>>()?;
    let total: f64 = distances.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / updates.len() as f64; updates.len()]);
    }
    Ok(distances.iter().map(|d| d / total).collect())
}

/// Aggregation weights from performances: `a_k = g(p_k) / sum g(p_i)`.
///
/// Performances are floored at [`PERFORMANCE_FLOOR`] before g. When every
/// g value is zero (a single update with p = 1 under -log p) the weights
/// fall back to uniform.
pub fn compute_weights(performances: &[f64], reg: RegulationKind) -> Vec<f64> {
    let raw: Vec<f64> = performances.iter().map(|&p| reg.apply(p)).collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return vec![1.0 / performances.len() as f64; performances.len()];
    }
    raw.iter().map(|g| g / total).collect()
}

fn objective(
    truth: &ParamVector,
    updates: &[ModelUpdate],
    performances: &[f64],
    dist: DistanceKind,
    reg: RegulationKind,
) -> Result<f64, AggregationError> {
    let mut total = 0.0;
    for (update, &p) in updates.iter().zip(performances) {
        total += reg.apply(p) * dist.measure(truth, &update.delta)?;
    }
    Ok(total)
}

/// Runs FedTruth to convergence (truth movement below `tol`) or `max_iter`.
pub fn fedtruth(
    updates: &[ModelUpdate],
    dist: DistanceKind,
    reg: RegulationKind,
    tol: f64,
    max_iter: usize,
) -> Result<FedTruthResult, AggregationError> {
    fedtruth_with_observer(updates, dist, reg, tol, max_iter, |_| {})
}

/// [`fedtruth`] with a per-iteration observer, used by invariant tests to
/// inspect intermediate weights and performances.
pub fn fedtruth_with_observer(
    updates: &[ModelUpdate],
    dist: DistanceKind,
    reg: RegulationKind,
    tol: f64,
    max_iter: usize,
    mut observer: impl FnMut(&IterationState),
) -> Result<FedTruthResult, AggregationError> {
    if updates.is_empty() {
        return Err(AggregationError::NoUpdates);
    }
    let n = updates.len();
    let deltas: Vec<ParamVector> = updates.iter().map(|u| u.delta.clone()).collect();

    let mut weights = vec![1.0 / n as f64; n];
    let mut performances = vec![1.0 / n as f64; n];
    let mut truth: Option<ParamVector> = None;
    let mut objective_trace = Vec::new();
    let mut iterations = 0;

    for iteration in 1..=max_iter {
        iterations = iteration;
        let new_truth = weighted_sum(&deltas, &weights)?;
        performances = compute_performances(&new_truth, updates, dist)?;
        weights = compute_weights(&performances, reg);
        let objective_value = objective(&new_truth, updates, &performances, dist, reg)?;
        if !objective_value.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(AggregationError::NonFinite { iteration });
        }
        objective_trace.push(objective_value);
        observer(&IterationState {
            iteration,
            truth: &new_truth,
            performances: &performances,
            weights: &weights,
            objective: objective_value,
        });

        let converged = match &truth {
            Some(previous) => params::euclidean_distance(&new_truth, previous)? < tol,
            None => false,
        };
        truth = Some(new_truth);
        if converged {
            break;
        }
    }

    Ok(FedTruthResult {
        truth: truth.expect("max_iter >= 1 guarantees at least one iteration"),
        weights,
        performances,
        iterations,
        objective_trace,
    })
}
