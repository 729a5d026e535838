//! Flat parameter vectors and the distance functions used by the
//! truth-discovery aggregator and the contribution metrics.
//!
//! A [`ParamVector`] is the common currency of the whole crate: global
//! models, local updates, and estimated truths are all flat `f64` vectors.
//! Every operation rejects dimension mismatches and keeps entries finite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("weight count {weights} does not match vector count {vectors}")]
    WeightCountMismatch { weights: usize, vectors: usize },
    #[error("non-finite weight at index {0}")]
    NonFiniteWeight(usize),
    #[error("non-finite entry at index {0}")]
    NonFiniteEntry(usize),
    #[error("zero-norm vector has no direction for the angular distance")]
    DegenerateDirection,
    #[error("combination weight alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
}

/// A flat, finite, real-valued parameter or update vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting NaN/Inf entries.
    pub fn new(values: Vec<f64>) -> Result<Self, ParamsError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ParamsError::NonFiniteEntry(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64, ParamsError> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self + factor * other`, checked for matching dimensions.
    pub fn add_scaled(&self, other: &Self, factor: f64) -> Result<Self, ParamsError> {
        check_dims(self, other)?;
        let values = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a + factor * b)
            .collect();
        Self::new(values)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, ParamsError> {
        self.add_scaled(other, -1.0)
    }

    pub fn scale(&self, factor: f64) -> Result<Self, ParamsError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_dims(a: &ParamVector, b: &ParamVector) -> Result<(), ParamsError> {
    if a.dim() != b.dim() {
        return Err(ParamsError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Component-wise `sum_k weights[k] * vectors[k]`.
///
/// Summation runs in ascending index order so repeated runs are
/// bit-identical.
pub fn weighted_sum(vectors: &[ParamVector], weights: &[f64]) -> Result<ParamVector, ParamsError> {
    if vectors.is_empty() {
        return Err(ParamsError::EmptyInput("weighted_sum"));
    }
    if weights.len() != vectors.len() {
        return Err(ParamsError::WeightCountMismatch {
            weights: weights.len(),
            vectors: vectors.len(),
        });
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(ParamsError::NonFiniteWeight(i));
    }
    let dim = vectors[0].dim();
    let mut acc = vec![0.0; dim];
    for (vector, &weight) in vectors.iter().zip(weights) {
        check_dims(&vectors[0], vector)?;
        for (slot, &value) in acc.iter_mut().zip(vector.iter()) {
            *slot += weight * value;
        }
    }
    ParamVector::new(acc)
}

/// `||a - b||_2`.
pub fn euclidean_distance(a: &ParamVector, b: &ParamVector) -> Result<f64, ParamsError> {
    check_dims(a, b)?;
    let sum_sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum_sq.sqrt())
}

/// `arccos(cosine_similarity(a, b)) / pi`, in `[0, 1]`.
///
/// Evaluated through the half-angle form `2 * atan2(|u - v|, |u + v|)` on
/// the normalized vectors, which equals the clamped-arccos expression but
/// stays exact for parallel and antiparallel inputs where `acos` loses
/// eight digits. A zero-norm input carries no direction and is reported
/// as [`ParamsError::DegenerateDirection`]; the aggregation layer maps
/// that to the maximum distance 1.
pub fn angular_distance(a: &ParamVector, b: &ParamVector) -> Result<f64, ParamsError> {
    check_dims(a, b)?;
    let norm_a = a.norm();
    let norm_b = b.norm();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(ParamsError::DegenerateDirection);
    }
    let mut diff_sq = 0.0;
    let mut sum_sq = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let (u, v) = (x / norm_a, y / norm_b);
        diff_sq += (u - v) * (u - v);
        sum_sq += (u + v) * (u + v);
    }
    let angle = 2.0 * diff_sq.sqrt().atan2(sum_sq.sqrt());
    Ok(angle / std::f64::consts::PI)
}

/// `alpha * euclidean + (1 - alpha) * angular`.
///
/// At `alpha == 1` the angular part is not evaluated, so zero-norm inputs
/// only fail when the angular term actually contributes.
pub fn hybrid_distance(a: &ParamVector, b: &ParamVector, alpha: f64) -> Result<f64, ParamsError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ParamsError::AlphaOutOfRange(alpha));
    }
    let euclid = euclidean_distance(a, b)?;
    if alpha == 1.0 {
        return Ok(euclid);
    }
    let angular = angular_distance(a, b)?;
    Ok(alpha * euclid + (1.0 - alpha) * angular)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn weighted_sum_identity() {
        let v = pv(&[1.5, -2.0, 3.25]);
        assert_eq!(weighted_sum(std::slice::from_ref(&v), &[1.0]).unwrap(), v);
    }

    #[test]
    fn weighted_sum_mean() {
        let out = weighted_sum(&[pv(&[0.0, 0.0]), pv(&[4.0, 8.0])], &[0.5, 0.5]).unwrap();
        assert_eq!(out, pv(&[2.0, 4.0]));
    }

    #[test]
    fn weighted_sum_convex_combination() {
        let out = weighted_sum(&[pv(&[0.0]), pv(&[4.0])], &[0.25, 0.75]).unwrap();
        assert_eq!(out, pv(&[3.0]));
    }

    #[test]
    fn weighted_sum_rejects_bad_input() {
        assert_eq!(
            weighted_sum(&[], &[]),
            Err(ParamsError::EmptyInput("weighted_sum"))
        );
        assert!(matches!(
            weighted_sum(&[pv(&[1.0]), pv(&[1.0, 2.0])], &[0.5, 0.5]),
            Err(ParamsError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            weighted_sum(&[pv(&[1.0])], &[0.5, 0.5]),
            Err(ParamsError::WeightCountMismatch { .. })
        ));
        assert_eq!(
            weighted_sum(&[pv(&[1.0])], &[f64::NAN]),
            Err(ParamsError::NonFiniteWeight(0))
        );
    }

    #[test]
    fn euclidean_examples() {
        let v = pv(&[0.3, -1.0, 7.0]);
        assert_eq!(euclidean_distance(&v, &v).unwrap(), 0.0);
        assert_eq!(
            euclidean_distance(&pv(&[0.0, 0.0]), &pv(&[3.0, 4.0])).unwrap(),
            5.0
        );
        assert_eq!(
            euclidean_distance(&pv(&[1.0, 2.0, 2.0]), &pv(&[0.0, 0.0, 0.0])).unwrap(),
            3.0
        );
    }

    #[test]
    fn angular_examples() {
        let v = pv(&[2.0, -1.0]);
        let neg = v.scale(-1.0).unwrap();
        assert_eq!(angular_distance(&v, &v).unwrap(), 0.0);
        assert!((angular_distance(&v, &neg).unwrap() - 1.0).abs() < 1e-15);
        assert!(
            (angular_distance(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap() - 0.5).abs() < 1e-15
        );
    }

    #[test]
    fn angular_rejects_zero_norm() {
        assert_eq!(
            angular_distance(&pv(&[0.0, 0.0]), &pv(&[3.0, 4.0])),
            Err(ParamsError::DegenerateDirection)
        );
    }

    #[test]
    fn hybrid_limit_cases() {
        let a = pv(&[1.0, 2.0]);
        let b = pv(&[-3.0, 0.5]);
        assert_eq!(
            hybrid_distance(&a, &b, 1.0).unwrap(),
            euclidean_distance(&a, &b).unwrap()
        );
        assert_eq!(
            hybrid_distance(&a, &b, 0.0).unwrap(),
            angular_distance(&a, &b).unwrap()
        );
        // Zero-norm input: fine at alpha = 1, degenerate as soon as the
        // angular term contributes.
        let zero = pv(&[0.0, 0.0]);
        let far = pv(&[3.0, 4.0]);
        assert_eq!(hybrid_distance(&zero, &far, 1.0).unwrap(), 5.0);
        assert_eq!(
            hybrid_distance(&zero, &far, 0.5),
            Err(ParamsError::DegenerateDirection)
        );
        assert_eq!(
            hybrid_distance(&a, &b, 1.5),
            Err(ParamsError::AlphaOutOfRange(1.5))
        );
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert_eq!(
            ParamVector::new(vec![1.0, f64::INFINITY]),
            Err(ParamsError::NonFiniteEntry(1))
        );
    }

    fn small_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0f64..100.0, dim)
    }

    proptest! {
        #[test]
        fn euclidean_symmetric_nonnegative(a in small_vec(4), b in small_vec(4)) {
            let (a, b) = (pv(&a), pv(&b));
            let d_ab = euclidean_distance(&a, &b).unwrap();
            let d_ba = euclidean_distance(&b, &a).unwrap();
            prop_assert!(d_ab >= 0.0);
            prop_assert_eq!(d_ab, d_ba);
            prop_assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn angular_scale_invariant(a in small_vec(4), c in 0.01f64..50.0) {
            let a = pv(&a);
            prop_assume!(a.norm() > 1e-9);
            let scaled = a.scale(c).unwrap();
            let d = angular_distance(&scaled, &a).unwrap();
            prop_assert!(d.abs() < 1e-12);
        }

        #[test]
        fn hybrid_is_convex_combination(
            a in small_vec(4),
            b in small_vec(4),
            alpha in 0.0f64..=1.0,
        ) {
            let (a, b) = (pv(&a), pv(&b));
            prop_assume!(a.norm() > 1e-9 && b.norm() > 1e-9);
            let d_l = euclidean_distance(&a, &b).unwrap();
            let d_a = angular_distance(&a, &b).unwrap();
            let d_h = hybrid_distance(&a, &b, alpha).unwrap();
            prop_assert!(d_h >= d_l.min(d_a) - 1e-12);
            prop_assert!(d_h <= d_l.max(d_a) + 1e-12);
        }

        #[test]
        fn weighted_sum_of_identical_vectors(v in small_vec(6), w in 0.05f64..0.95) {
            let v = pv(&v);
            let out = weighted_sum(&[v.clone(), v.clone()], &[w, 1.0 - w]).unwrap();
            for (x, y) in out.iter().zip(v.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
