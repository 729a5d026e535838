//! Byzantine client behaviors injected between local training and
//! aggregation: model-boosting (scaling an honestly trained delta by a
//! large factor) and Gaussian-noise updates (replacing the delta with
//! pure noise).

use std::collections::BTreeSet;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::ModelUpdate;
use crate::params::ParamVector;
use crate::seed::{self, Domain};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("boost factor {0} must be finite and positive")]
    BadFactor(f64),
    #[error("noise sigma {0} must be finite and non-negative")]
    BadSigma(f64),
    #[error("attacker {client_id} is not among this round's updates")]
    AttackerNotInRound { client_id: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AttackKind {
    /// Scale the honest delta by `factor`.
    Boost { factor: f64 },
    /// Replace the delta with i.i.d. Normal(0, sigma^2) entries.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub attacker_ids: BTreeSet<usize>,
    pub kind: AttackKind,
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        match self.kind {
            AttackKind::Boost { factor } => {
                if !factor.is_finite() || factor <= 0.0 {
                    return Err(AttackError::BadFactor(factor));
                }
            }
            AttackKind::Gaussian { sigma } => {
                if !sigma.is_finite() || sigma < 0.0 {
                    return Err(AttackError::BadSigma(sigma));
                }
            }
        }
        Ok(())
    }
}

/// Scales the update's delta by `factor`; client id and sample count are
/// untouched.
pub fn boost_update(update: &ModelUpdate, factor: f64) -> Result<ModelUpdate, AttackError> {
    if !factor.is_finite() || factor <= 0.0 {
        return Err(AttackError::BadFactor(factor));
    }
    let delta = update
        .delta
        .scale(factor)
        .map_err(|_| AttackError::BadFactor(factor))?;
    Ok(ModelUpdate {
        client_id: update.client_id,
        delta,
        sample_count: update.sample_count,
    })
}

/// A pure-noise delta with i.i.d. Normal(0, sigma^2) entries, drawn from
/// the given stream.
pub fn gaussian_noise_update(dim: usize, sigma: f64, stream: &mut impl rand::Rng) -> ParamVector {
    let values = (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(stream);
            sigma * z
        })
        .collect();
    ParamVector::new(values).expect("scaled normal draws are finite")
}

/// Replaces each attacker's update according to the attack kind; everyone
/// else passes through bit-identical and list order is preserved. Noise
/// streams are keyed by (seed, client id, round).
pub fn apply_attacks(
    updates: &[ModelUpdate],
    spec: &AttackSpec,
    round: u32,
) -> Result<Vec<ModelUpdate>, AttackError> {
    spec.validate()?;
    for &attacker in &spec.attacker_ids {
        if !updates.iter().any(|u| u.client_id == attacker) {
            return Err(AttackError::AttackerNotInRound {
                client_id: attacker,
            });
        }
    }
    updates
        .iter()
        .map(|update| {
            if !spec.attacker_ids.contains(&update.client_id) {
                return Ok(update.clone());
            }
            match spec.kind {
                AttackKind::Boost { factor } => boost_update(update, factor),
                AttackKind::Gaussian { sigma } => {
                    let mut stream = seed::stream(
                        spec.seed,
                        Domain::Attack,
                        &[update.client_id as u64, round as u64],
                    );
                    Ok(ModelUpdate {
                        client_id: update.client_id,
                        delta: gaussian_noise_update(update.delta.dim(), sigma, &mut stream),
                        sample_count: update.sample_count,
                    })
                }
            }
        })
        .collect()
}
