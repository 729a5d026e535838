//! Small trainable classifiers: multinomial logistic regression and a
//! one-hidden-layer tanh MLP.
//!
//! Both models operate on flat [`ParamVector`]s so the aggregation and
//! contribution machinery never needs to know the architecture. Gradients
//! are computed analytically (mean cross-entropy over the batch) and local
//! training is plain mini-batch SGD with seeded per-epoch shuffling.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::ModelUpdate;
use crate::params::{ParamVector, ParamsError};
use crate::seed::{self, Domain};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter vector has dim {actual}, model expects {expected}")]
    ParamDimMismatch { expected: usize, actual: usize },
    #[error("feature row has dim {actual}, model expects {expected}")]
    FeatureDimMismatch { expected: usize, actual: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {label} at sample {index} outside [0, {num_classes})")]
    LabelOutOfRange {
        label: usize,
        index: usize,
        num_classes: usize,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("feature matrix length {features} is not a multiple of input_dim {input_dim}")]
    RaggedFeatures { features: usize, input_dim: usize },
    #[error("{rows} feature rows but {labels} labels")]
    RowCountMismatch { rows: usize, labels: usize },
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Model architecture choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp { hidden_units: usize },
}

/// Architecture plus input/output dimensions; fully determines the
/// flat parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidSpec("input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidSpec("num_classes must be >= 2".into()));
        }
        if let ModelKind::Mlp { hidden_units } = self.kind {
            if hidden_units == 0 {
                return Err(ModelError::InvalidSpec(
                    "hidden_units must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Named parameter segments (weight matrices row-major, then biases).
    pub fn layout(&self) -> Vec<(&'static str, usize)> {
        let (d, c) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::Linear => vec![("w", c * d), ("b", c)],
            ModelKind::Mlp { hidden_units: h } => {
                vec![("w1", h * d), ("b1", h), ("w2", c * h), ("b2", c)]
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, len)| len).sum()
    }

    /// Splits a flat vector into its layout segments.
    pub fn unflatten(&self, params: &ParamVector) -> Result<Vec<Vec<f64>>, ModelError> {
        check_params(self, params)?;
        let mut segments = Vec::new();
        let mut offset = 0;
        for (_, len) in self.layout() {
            segments.push(params.as_slice()[offset..offset + len].to_vec());
            offset += len;
        }
        Ok(segments)
    }

    /// Concatenates layout segments back into a flat vector.
    pub fn flatten(&self, segments: &[Vec<f64>]) -> Result<ParamVector, ModelError> {
        let layout = self.layout();
        if segments.len() != layout.len()
            || segments
                .iter()
                .zip(&layout)
                .any(|(seg, (_, len))| seg.len() != *len)
        {
            return Err(ModelError::InvalidSpec(
                "segment shapes do not match the model layout".into(),
            ));
        }
        Ok(ParamVector::new(segments.concat())?)
    }
}

/// Local SGD settings. The seed fully determines batch shuffling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 10,
            batch_size: 64,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

/// Dense feature matrix (row-major) with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        input_dim: usize,
        labels: Vec<usize>,
    ) -> Result<Self, ModelError> {
        if input_dim == 0 || !features.len().is_multiple_of(input_dim) {
            return Err(ModelError::RaggedFeatures {
                features: features.len(),
                input_dim,
            });
        }
        let rows = features.len() / input_dim;
        if rows != labels.len() {
            return Err(ModelError::RowCountMismatch {
                rows,
                labels: labels.len(),
            });
        }
        Ok(Self {
            features,
            input_dim,
            labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.feature_row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            input_dim: self.input_dim,
            labels,
        }
    }
}

fn check_params(spec: &ModelSpec, params: &ParamVector) -> Result<(), ModelError> {
    if params.dim() != spec.param_count() {
        return Err(ModelError::ParamDimMismatch {
            expected: spec.param_count(),
            actual: params.dim(),
        });
    }
    Ok(())
}

fn check_batch(spec: &ModelSpec, batch: &LabeledDataset) -> Result<(), ModelError> {
    if batch.n_samples() == 0 {
        return Err(ModelError::EmptyDataset);
    }
    if batch.input_dim() != spec.input_dim {
        return Err(ModelError::FeatureDimMismatch {
            expected: spec.input_dim,
            actual: batch.input_dim(),
        });
    }
    if let Some((index, &label)) = batch
        .labels()
        .iter()
        .enumerate()
        .find(|(_, &l)| l >= spec.num_classes)
    {
        return Err(ModelError::LabelOutOfRange {
            label,
            index,
            num_classes: spec.num_classes,
        });
    }
    Ok(())
}

/// Class logits for one sample.
fn logits(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> Vec<f64> {
    let p = params.as_slice();
    let (d, c) = (spec.input_dim, spec.num_classes);
    match spec.kind {
        ModelKind::Linear => {
            let bias = &p[c * d..];
            (0..c)
                .map(|class| {
                    let row = &p[class * d..(class + 1) * d];
                    bias[class] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect()
        }
        ModelKind::Mlp { hidden_units: h } => {
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let hidden: Vec<f64> = (0..h)
                .map(|unit| {
                    let row = &w1[unit * d..(unit + 1) * d];
                    (b1[unit] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
                })
                .collect();
            (0..c)
                .map(|class| {
                    let row = &w2[class * h..(class + 1) * h];
                    b2[class] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect()
        }
    }
}

/// Softmax probabilities and the sample's cross-entropy loss.
fn softmax_loss(z: &[f64], label: usize) -> (Vec<f64>, f64) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let loss = max + sum.ln() - z[label];
    (probs, loss)
}

/// Mean cross-entropy loss over the batch and its exact gradient.
pub fn loss_and_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &LabeledDataset,
) -> Result<(f64, ParamVector), ModelError> {
    check_params(spec, params)?;
    check_batch(spec, batch)?;

    let n = batch.n_samples() as f64;
    let (d, c) = (spec.input_dim, spec.num_classes);
    let mut grad = vec![0.0; spec.param_count()];
    let mut total_loss = 0.0;

    match spec.kind {
        ModelKind::Linear => {
            for i in 0..batch.n_samples() {
                let x = batch.feature_row(i);
                let z = logits(spec, params, x);
                let (probs, loss) = softmax_loss(&z, batch.label(i));
                total_loss += loss;
                for class in 0..c {
                    let dz = (probs[class] - if class == batch.label(i) { 1.0 } else { 0.0 }) / n;
                    let row = &mut grad[class * d..(class + 1) * d];
                    for (slot, &v) in row.iter_mut().zip(x) {
                        *slot += dz * v;
                    }
                    grad[c * d + class] += dz;
                }
            }
        }
        ModelKind::Mlp { hidden_units: h } => {
            let p = params.as_slice();
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, _b2) = rest.split_at(c * h);
            let w2_off = h * d + h;
            let b2_off = w2_off + c * h;
            for i in 0..batch.n_samples() {
                let x = batch.feature_row(i);
                let hidden: Vec<f64> = (0..h)
                    .map(|unit| {
                        let row = &w1[unit * d..(unit + 1) * d];
                        (b1[unit] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
                    })
                    .collect();
                let z: Vec<f64> = (0..c)
                    .map(|class| {
                        let row = &w2[class * h..(class + 1) * h];
                        p[b2_off + class] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect();
                let (probs, loss) = softmax_loss(&z, batch.label(i));
                total_loss += loss;

                let mut d_hidden = vec![0.0; h];
                for class in 0..c {
                    let dz = probs[class] - if class == batch.label(i) { 1.0 } else { 0.0 };
                    for unit in 0..h {
                        grad[w2_off + class * h + unit] += dz * hidden[unit] / n;
                        d_hidden[unit] += w2[class * h + unit] * dz;
                    }
                    grad[b2_off + class] += dz / n;
                }
                for unit in 0..h {
                    // tanh'(a) = 1 - tanh(a)^2
                    let da = d_hidden[unit] * (1.0 - hidden[unit] * hidden[unit]) / n;
                    let row = &mut grad[unit * d..(unit + 1) * d];
                    for (slot, &v) in row.iter_mut().zip(x) {
                        *slot += da * v;
                    }
                    grad[h * d + unit] += da;
                }
            }
        }
    }

    Ok((total_loss / n, ParamVector::new(grad)?))
}

/// Runs local mini-batch SGD from the global parameters and returns the
/// update `delta = global - trained` with the local sample count.
pub fn local_train(
    spec: &ModelSpec,
    global_params: &ParamVector,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    client_id: usize,
) -> Result<ModelUpdate, ModelError> {
    check_params(spec, global_params)?;
    check_batch(spec, data)?;

    let n = data.n_samples();
    let mut params = global_params.clone();
    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::child_stream(cfg.seed, epoch as u64));
        for (batch_index, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            // A batch is a set: fix the summation order so the shuffle
            // decides membership, not floating-point accumulation order.
            let mut chunk = chunk.to_vec();
            chunk.sort_unstable();
            let batch = data.subset(&chunk);
            let (loss, grad) = loss_and_gradient(spec, &params, &batch)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            params = params.add_scaled(&grad, -cfg.learning_rate)?;
        }
    }

    let delta = global_params.sub(&params)?;
    Ok(ModelUpdate {
        client_id,
        delta,
        sample_count: n,
    })
}

/// Fraction of samples whose argmax prediction matches the label; argmax
/// ties resolve to the lowest class index.
pub fn evaluate_accuracy(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &LabeledDataset,
) -> Result<f64, ModelError> {
    check_params(spec, params)?;
    check_batch(spec, data)?;

    let mut correct = 0;
    for i in 0..data.n_samples() {
        let z = logits(spec, params, data.feature_row(i));
        let mut best = 0;
        for (class, &value) in z.iter().enumerate() {
            if value > z[best] {
                best = class;
            }
        }
        if best == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.n_samples() as f64)
}

/// Server update rule `w - eta * delta`.
pub fn apply_server_step(
    w: &ParamVector,
    delta: &ParamVector,
    eta: f64,
) -> Result<ParamVector, ModelError> {
    Ok(w.add_scaled(delta, -eta)?)
}

/// Deterministic initial global model: zeros for the linear model, small
/// seeded Gaussian values for the MLP (zero init would freeze symmetric
/// hidden units).
pub fn initial_params(spec: &ModelSpec, master_seed: u64) -> ParamVector {
    match spec.kind {
        ModelKind::Linear => ParamVector::zeros(spec.param_count()),
        ModelKind::Mlp { .. } => {
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = seed::stream(master_seed, Domain::ModelInit, &[]);
            let scale = 1.0 / (spec.input_dim as f64).sqrt();
            let values = (0..spec.param_count())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            ParamVector::new(values).expect("finite init")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_spec() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Linear,
            input_dim: 2,
            num_classes: 2,
        }
    }

    fn toy_data() -> LabeledDataset {
        LabeledDataset::new(
            vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.5, 2.0, -2.0],
            2,
            vec![0, 1, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn zero_params_two_classes_loss_is_ln2() {
        let spec = two_class_spec();
        let params = ParamVector::zeros(spec.param_count());
        let (loss, _) = loss_and_gradient(&spec, &params, &toy_data()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_leaves_mean_loss_and_grad_unchanged() {
        let spec = two_class_spec();
        let params = ParamVector::new(vec![0.3, -0.2, 0.1, 0.4, -0.6, 0.2]).unwrap();
        let data = toy_data();
        let doubled = data.subset(&[0, 1, 2, 3, 0, 1, 2, 3]);
        let (loss_a, grad_a) = loss_and_gradient(&spec, &params, &data).unwrap();
        let (loss_b, grad_b) = loss_and_gradient(&spec, &params, &doubled).unwrap();
        assert!((loss_a - loss_b).abs() < 1e-12);
        for (a, b) in grad_a.iter().zip(grad_b.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_empty_batch_and_bad_labels() {
        let spec = two_class_spec();
        let params = ParamVector::zeros(spec.param_count());
        let empty = LabeledDataset::new(vec![], 2, vec![]).unwrap();
        assert!(matches!(
            loss_and_gradient(&spec, &params, &empty),
            Err(ModelError::EmptyDataset)
        ));
        let bad = LabeledDataset::new(vec![1.0, 2.0], 2, vec![5]).unwrap();
        assert!(matches!(
            loss_and_gradient(&spec, &params, &bad),
            Err(ModelError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn local_train_zero_lr_gives_zero_delta() {
        let spec = two_class_spec();
        let global = ParamVector::new(vec![0.5; 6]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let update = local_train(&spec, &global, &toy_data(), &cfg, 0).unwrap();
        assert_eq!(update.delta, ParamVector::zeros(6));
        assert_eq!(update.sample_count, 4);
    }

    #[test]
    fn single_full_batch_step_matches_analytic_gradient() {
        let spec = two_class_spec();
        let global = ParamVector::new(vec![0.1, -0.3, 0.2, 0.0, 0.4, -0.1]).unwrap();
        let data = toy_data();
        let cfg = TrainConfig {
            local_epochs: 1,
            batch_size: 64,
            learning_rate: 0.5,
            seed: 9,
        };
        let update = local_train(&spec, &global, &data, &cfg, 0).unwrap();
        let (_, grad) = loss_and_gradient(&spec, &global, &data).unwrap();
        let expected = grad.scale(cfg.learning_rate).unwrap();
        for (a, b) in update.delta.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn local_train_is_deterministic() {
        let spec = ModelSpec {
            kind: ModelKind::Mlp { hidden_units: 3 },
            input_dim: 2,
            num_classes: 2,
        };
        let global = initial_params(&spec, 7);
        let cfg = TrainConfig {
            local_epochs: 3,
            batch_size: 2,
            learning_rate: 0.1,
            seed: 11,
        };
        let a = local_train(&spec, &global, &toy_data(), &cfg, 0).unwrap();
        let b = local_train(&spec, &global, &toy_data(), &cfg, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn delta_norm_shrinks_with_learning_rate() {
        let spec = two_class_spec();
        let global = ParamVector::new(vec![0.2; 6]).unwrap();
        let data = toy_data();
        let mut last = f64::INFINITY;
        for lr in [0.1, 0.01, 0.001, 0.0001] {
            let cfg = TrainConfig {
                local_epochs: 2,
                batch_size: 64,
                learning_rate: lr,
                seed: 3,
            };
            let update = local_train(&spec, &global, &data, &cfg, 0).unwrap();
            let norm = update.delta.norm();
            assert!(norm < last);
            last = norm;
        }
    }

    #[test]
    fn accuracy_on_separable_points() {
        let spec = two_class_spec();
        // w_0 = (1, 0), w_1 = (-1, 0): sign of x_0 decides the class.
        let params = ParamVector::new(vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
        let data =
            LabeledDataset::new(vec![2.0, 0.0, -3.0, 1.0, 5.0, -1.0], 2, vec![0, 1, 0]).unwrap();
        assert_eq!(evaluate_accuracy(&spec, &params, &data).unwrap(), 1.0);
    }

    #[test]
    fn zero_params_predict_class_zero_via_tie_break() {
        let spec = two_class_spec();
        let params = ParamVector::zeros(spec.param_count());
        // One of four samples is class 0.
        let data = LabeledDataset::new(vec![1.0; 8], 2, vec![0, 1, 1, 1]).unwrap();
        assert_eq!(evaluate_accuracy(&spec, &params, &data).unwrap(), 0.25);
    }

    #[test]
    fn accuracy_three_of_four() {
        let spec = two_class_spec();
        let params = ParamVector::new(vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
        // Last sample is mislabeled relative to the decision rule.
        let data = LabeledDataset::new(
            vec![2.0, 0.0, -3.0, 1.0, 5.0, -1.0, 4.0, 0.0],
            2,
            vec![0, 1, 0, 1],
        )
        .unwrap();
        assert_eq!(evaluate_accuracy(&spec, &params, &data).unwrap(), 0.75);
    }

    #[test]
    fn server_step_examples() {
        let w = ParamVector::new(vec![2.0, 2.0]).unwrap();
        let delta = ParamVector::new(vec![2.0, 4.0]).unwrap();
        assert_eq!(apply_server_step(&w, &delta, 0.0).unwrap(), w);
        assert_eq!(
            apply_server_step(&w, &w, 1.0).unwrap(),
            ParamVector::zeros(2)
        );
        assert_eq!(
            apply_server_step(&w, &delta, 0.5).unwrap(),
            ParamVector::new(vec![1.0, 0.0]).unwrap()
        );
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let spec = ModelSpec {
            kind: ModelKind::Mlp { hidden_units: 4 },
            input_dim: 3,
            num_classes: 5,
        };
        let params = initial_params(&spec, 21);
        let segments = spec.unflatten(&params).unwrap();
        assert_eq!(segments.len(), 4);
        assert_eq!(spec.flatten(&segments).unwrap(), params);
    }

    #[test]
    fn finite_difference_gradient_spot_check() {
        for kind in [ModelKind::Linear, ModelKind::Mlp { hidden_units: 3 }] {
            let spec = ModelSpec {
                kind,
                input_dim: 2,
                num_classes: 3,
            };
            let data = LabeledDataset::new(vec![0.4, -1.2, 1.5, 0.3, -0.7, 0.9], 2, vec![0, 2, 1])
                .unwrap();
            let params = ParamVector::new(
                (0..spec.param_count())
                    .map(|i| (i as f64 * 0.37).sin() * 0.5)
                    .collect(),
            )
            .unwrap();
            let (_, grad) = loss_and_gradient(&spec, &params, &data).unwrap();
            let step = 1e-4;
            for i in 0..spec.param_count() {
                let mut plus = params.as_slice().to_vec();
                let mut minus = plus.clone();
                plus[i] += step;
                minus[i] -= step;
                let (lp, _) =
                    loss_and_gradient(&spec, &ParamVector::new(plus).unwrap(), &data).unwrap();
                let (lm, _) =
                    loss_and_gradient(&spec, &ParamVector::new(minus).unwrap(), &data).unwrap();
                let fd = (lp - lm) / (2.0 * step);
                let denom = fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(
                    (fd - grad[i]).abs() / denom < 1e-5,
                    "component {i}: fd {fd} vs analytic {}",
                    grad[i]
                );
            }
        }
    }
}
