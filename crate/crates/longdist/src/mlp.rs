//! A small feed-forward softmax classifier with per-epoch prediction
//! snapshots.
//!
//! The network is fixed at 4 inputs, one hidden layer of 8 ReLU nodes, and 7
//! softmax outputs, trained with plain mini-batch SGD on categorical
//! cross-entropy. After every epoch the full training and test sets are
//! re-predicted with the post-epoch weights and the labels are recorded, so a
//! training run yields one [`TraceMatrix`] per set. Weight snapshots are
//! optional; the traces are the canonical artifact.
//!
//! Training is sequential and fully deterministic per seed. The per-epoch
//! full-set prediction passes run data-parallel; they are read-only over a
//! fixed model state and write disjoint rows.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::derive_seed;
use crate::trace::{Label, TraceError, TraceMatrix};

pub const INPUT_DIM: usize = 4;
pub const HIDDEN_DIM: usize = 8;
pub const OUTPUT_DIM: usize = 7;

/// Probabilities below this floor are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Number of parameters, in serialization order: W1 row-major, b1, W2
/// row-major, b2.
pub const PARAM_COUNT: usize =
    HIDDEN_DIM * INPUT_DIM + HIDDEN_DIM + OUTPUT_DIM * HIDDEN_DIM + OUTPUT_DIM;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("batch_size must be at least 1")]
    ZeroBatchSize,
    #[error("learning_rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("{set} set is empty")]
    EmptySet { set: &'static str },
    #[error("{set} set: features and labels have different lengths ({features} vs {labels})")]
    LengthMismatch { set: &'static str, features: usize, labels: usize },
    #[error("label {label} at {set} index {index} is out of range (0..{})", OUTPUT_DIM)]
    LabelOutOfRange { set: &'static str, index: usize, label: Label },
    #[error("non-finite feature at {set} index {index}")]
    NonFiniteFeature { set: &'static str, index: usize },
    #[error("training diverged: non-finite batch loss {loss} at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("non-finite parameter after update at epoch {epoch}, batch {batch}")]
    NonFiniteParam { epoch: usize, batch: usize },
    #[error("non-finite output in forward pass")]
    NonFiniteForward,
    #[error("empty batch")]
    EmptyBatch,
    #[error("weight blob has {got} bytes, expected {expected}")]
    BadWeightLength { expected: usize, got: usize },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// The 4→8→7 model: hidden weights/biases and output weights/biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w1: [[f64; INPUT_DIM]; HIDDEN_DIM],
    pub b1: [f64; HIDDEN_DIM],
    pub w2: [[f64; HIDDEN_DIM]; OUTPUT_DIM],
    pub b2: [f64; OUTPUT_DIM],
}

/// Parameter-shaped gradient set.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: [[f64; INPUT_DIM]; HIDDEN_DIM],
    pub b1: [f64; HIDDEN_DIM],
    pub w2: [[f64; HIDDEN_DIM]; OUTPUT_DIM],
    pub b2: [f64; OUTPUT_DIM],
}

impl Gradients {
    fn zero() -> Self {
        Self {
            w1: [[0.0; INPUT_DIM]; HIDDEN_DIM],
            b1: [0.0; HIDDEN_DIM],
            w2: [[0.0; HIDDEN_DIM]; OUTPUT_DIM],
            b2: [0.0; OUTPUT_DIM],
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Also keep a copy of the weights at the end of every epoch.
    #[serde(default)]
    pub snapshot_weights: bool,
}

fn default_epochs() -> usize {
    15
}
fn default_batch_size() -> usize {
    128
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_seed() -> u64 {
    42
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            seed: default_seed(),
            snapshot_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::ZeroEpochs);
        }
        if self.batch_size == 0 {
            return Err(TrainError::ZeroBatchSize);
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::BadLearningRate(self.learning_rate));
        }
        Ok(())
    }
}

/// Accuracy and mean batch loss recorded after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub mean_loss: f64,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: MlpModel,
    /// Per-epoch predictions over the training set, with true labels attached.
    pub train_trace: TraceMatrix,
    /// Per-epoch predictions over the test set, with true labels attached.
    pub test_trace: TraceMatrix,
    pub metrics: Vec<EpochMetrics>,
    /// Post-epoch weight copies, present when `snapshot_weights` is set.
    pub weight_snapshots: Option<Vec<MlpModel>>,
}

/// Initializes weights uniformly in ±√(6 / fan_in) and biases to zero.
/// Deterministic per seed; entries are drawn row-major, W1 first.
pub fn init_model(seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound1 = (6.0 / INPUT_DIM as f64).sqrt();
    let bound2 = (6.0 / HIDDEN_DIM as f64).sqrt();
    let mut model = MlpModel {
        w1: [[0.0; INPUT_DIM]; HIDDEN_DIM],
        b1: [0.0; HIDDEN_DIM],
        w2: [[0.0; HIDDEN_DIM]; OUTPUT_DIM],
        b2: [0.0; OUTPUT_DIM],
    };
    for row in &mut model.w1 {
        for w in row {
            *w = rng.random_range(-bound1..bound1);
        }
    }
    for row in &mut model.w2 {
        for w in row {
            *w = rng.random_range(-bound2..bound2);
        }
    }
    model
}

struct ForwardParts {
    pre_hidden: [f64; HIDDEN_DIM],
    hidden: [f64; HIDDEN_DIM],
    probs: [f64; OUTPUT_DIM],
}

fn forward_parts(model: &MlpModel, features: &[f64; INPUT_DIM]) -> ForwardParts {
    let mut pre_hidden = model.b1;
    for (z, row) in pre_hidden.iter_mut().zip(&model.w1) {
        for (w, x) in row.iter().zip(features) {
            *z += w * x;
        }
    }
    let mut hidden = pre_hidden;
    for h in &mut hidden {
        *h = h.max(0.0);
    }
    let mut logits = model.b2;
    for (z, row) in logits.iter_mut().zip(&model.w2) {
        for (w, h) in row.iter().zip(&hidden) {
            *z += w * h;
        }
    }
    // Stabilized softmax: subtract the max logit before exponentiating.
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = logits;
    let mut sum = 0.0;
    for p in &mut probs {
        *p = (*p - max).exp();
        sum += *p;
    }
    for p in &mut probs {
        *p /= sum;
    }
    ForwardParts { pre_hidden, hidden, probs }
}

/// Class probabilities for one input: ReLU hidden layer, stabilized softmax
/// output.
pub fn forward(
    model: &MlpModel,
    features: &[f64; INPUT_DIM],
) -> Result<[f64; OUTPUT_DIM], TrainError> {
    let parts = forward_parts(model, features);
    if parts.probs.iter().any(|p| !p.is_finite()) {
        return Err(TrainError::NonFiniteForward);
    }
    Ok(parts.probs)
}

/// Cross-entropy of one prediction: −log(probs\[label\]), with the
/// probability floored at [`PROB_FLOOR`].
pub fn loss(probs: &[f64; OUTPUT_DIM], label: Label) -> Result<f64, TrainError> {
    if label as usize >= OUTPUT_DIM {
        return Err(TrainError::LabelOutOfRange { set: "batch", index: 0, label });
    }
    Ok(-probs[label as usize].max(PROB_FLOOR).ln())
}

/// Predicted label: argmax of [`forward`], ties broken toward the lowest
/// class index.
pub fn predict(model: &MlpModel, features: &[f64; INPUT_DIM]) -> Label {
    let probs = forward_parts(model, features).probs;
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best as Label
}

fn accumulate_batch(
    model: &MlpModel,
    features: &[[f64; INPUT_DIM]],
    labels: &[Label],
) -> Result<(Gradients, f64), TrainError> {
    if features.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if features.len() != labels.len() {
        return Err(TrainError::LengthMismatch {
            set: "batch",
            features: features.len(),
            labels: labels.len(),
        });
    }
    let mut grads = Gradients::zero();
    let mut loss_sum = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        if y as usize >= OUTPUT_DIM {
            return Err(TrainError::LabelOutOfRange { set: "batch", index: 0, label: y });
        }
        let parts = forward_parts(model, x);
        loss_sum += -parts.probs[y as usize].max(PROB_FLOOR).ln();

        // Softmax + cross-entropy: d(loss)/d(logit_j) = p_j − 1[j == y].
        let mut d_logits = parts.probs;
        d_logits[y as usize] -= 1.0;

        for (gr, d) in grads.w2.iter_mut().zip(&d_logits) {
            for (g, h) in gr.iter_mut().zip(&parts.hidden) {
                *g += d * h;
            }
        }
        for (g, d) in grads.b2.iter_mut().zip(&d_logits) {
            *g += d;
        }

        let mut d_hidden = [0.0; HIDDEN_DIM];
        for (d, row) in d_logits.iter().zip(&model.w2) {
            for (dh, w) in d_hidden.iter_mut().zip(row) {
                *dh += d * w;
            }
        }
        // ReLU gate: gradient flows only where the pre-activation was positive.
        for (dh, z) in d_hidden.iter_mut().zip(&parts.pre_hidden) {
            if *z <= 0.0 {
                *dh = 0.0;
            }
        }
        for (gr, dh) in grads.w1.iter_mut().zip(&d_hidden) {
            for (g, xv) in gr.iter_mut().zip(x) {
                *g += dh * xv;
            }
        }
        for (g, dh) in grads.b1.iter_mut().zip(&d_hidden) {
            *g += dh;
        }
    }
    let scale = 1.0 / features.len() as f64;
    for g in grads.params_mut() {
        *g *= scale;
    }
    Ok((grads, loss_sum * scale))
}

/// Analytic gradient of the mean batch loss with respect to every parameter.
pub fn gradients(
    model: &MlpModel,
    features: &[[f64; INPUT_DIM]],
    labels: &[Label],
) -> Result<Gradients, TrainError> {
    accumulate_batch(model, features, labels).map(|(g, _)| g)
}

/// Mean cross-entropy of a batch under the current model.
pub fn mean_loss(
    model: &MlpModel,
    features: &[[f64; INPUT_DIM]],
    labels: &[Label],
) -> Result<f64, TrainError> {
    if features.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut sum = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let probs = forward(model, x)?;
        sum += loss(&probs, y)?;
    }
    Ok(sum / features.len() as f64)
}

impl MlpModel {
    fn step(&mut self, learning_rate: f64, grads: &Gradients) {
        for (p, g) in self.params_mut().zip(grads.params()) {
            *p -= learning_rate * g;
        }
    }

    fn all_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .flatten()
            .chain(&self.b1)
            .chain(self.w2.iter().flatten())
            .chain(&self.b2)
            .copied()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .flatten()
            .chain(&mut self.b1)
            .chain(self.w2.iter_mut().flatten())
            .chain(&mut self.b2)
    }

    /// Serializes all parameters as little-endian f64 in the documented
    /// order: W1 row-major, b1, W2 row-major, b2.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PARAM_COUNT * 8);
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() != PARAM_COUNT * 8 {
            return Err(TrainError::BadWeightLength { expected: PARAM_COUNT * 8, got: bytes.len() });
        }
        let mut model = MlpModel {
            w1: [[0.0; INPUT_DIM]; HIDDEN_DIM],
            b1: [0.0; HIDDEN_DIM],
            w2: [[0.0; HIDDEN_DIM]; OUTPUT_DIM],
            b2: [0.0; OUTPUT_DIM],
        };
        for (p, chunk) in model.params_mut().zip(bytes.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(model)
    }
}

impl Gradients {
    fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .flatten()
            .chain(&self.b1)
            .chain(self.w2.iter().flatten())
            .chain(&self.b2)
            .copied()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .flatten()
            .chain(&mut self.b1)
            .chain(self.w2.iter_mut().flatten())
            .chain(&mut self.b2)
    }
}

fn validate_set(
    set: &'static str,
    features: &[[f64; INPUT_DIM]],
    labels: &[Label],
) -> Result<(), TrainError> {
    if features.is_empty() {
        return Err(TrainError::EmptySet { set });
    }
    if features.len() != labels.len() {
        return Err(TrainError::LengthMismatch {
            set,
            features: features.len(),
            labels: labels.len(),
        });
    }
    for (index, x) in features.iter().enumerate() {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteFeature { set, index });
        }
    }
    for (index, &label) in labels.iter().enumerate() {
        if label as usize >= OUTPUT_DIM {
            return Err(TrainError::LabelOutOfRange { set, index, label });
        }
    }
    Ok(())
}

/// Trains with plain SGD and records full-set predictions after every epoch.
///
/// Features must already be standardized. The init and shuffle streams are
/// derived from `config.seed` with the role tags `mlp.init` and
/// `mlp.shuffle`; identical data and config reproduce the run bit for bit.
pub fn train(
    train_features: &[[f64; INPUT_DIM]],
    train_labels: &[Label],
    test_features: &[[f64; INPUT_DIM]],
    test_labels: &[Label],
    config: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    validate_set("train", train_features, train_labels)?;
    validate_set("test", test_features, test_labels)?;

    let n_train = train_features.len();
    let n_test = test_features.len();
    let k = config.epochs;

    let mut model = init_model(derive_seed(config.seed, "mlp.init"));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "mlp.shuffle"));

    let mut order: Vec<usize> = (0..n_train).collect();
    let mut batch_features = vec![[0.0; INPUT_DIM]; config.batch_size];
    let mut batch_labels = vec![0 as Label; config.batch_size];

    let mut train_preds = vec![0 as Label; n_train * k];
    let mut test_preds = vec![0 as Label; n_test * k];
    let mut metrics = Vec::with_capacity(k);
    let mut snapshots = config.snapshot_weights.then(Vec::new);

    for epoch in 1..=k {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            for (slot, &i) in chunk.iter().enumerate() {
                batch_features[slot] = train_features[i];
                batch_labels[slot] = train_labels[i];
            }
            let (grads, batch_loss) =
                accumulate_batch(&model, &batch_features[..chunk.len()], &batch_labels[..chunk.len()])?;
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch, loss: batch_loss });
            }
            model.step(config.learning_rate, &grads);
            if !model.all_finite() {
                return Err(TrainError::NonFiniteParam { epoch, batch });
            }
            loss_sum += batch_loss;
            batches += 1;
        }

        // Post-epoch snapshot: predict both full sets with the frozen model.
        let epoch_train: Vec<Label> =
            train_features.par_iter().map(|x| predict(&model, x)).collect();
        let epoch_test: Vec<Label> = test_features.par_iter().map(|x| predict(&model, x)).collect();
        for (i, &p) in epoch_train.iter().enumerate() {
            train_preds[i * k + (epoch - 1)] = p;
        }
        for (i, &p) in epoch_test.iter().enumerate() {
            test_preds[i * k + (epoch - 1)] = p;
        }
        metrics.push(EpochMetrics {
            epoch,
            train_accuracy: accuracy(&epoch_train, train_labels),
            test_accuracy: accuracy(&epoch_test, test_labels),
            mean_loss: loss_sum / batches as f64,
        });
        if let Some(ref mut snaps) = snapshots {
            snaps.push(model.clone());
        }
    }

    let train_trace = TraceMatrix::from_flat(
        n_train,
        k,
        OUTPUT_DIM as u16,
        train_preds,
        Some(train_labels.to_vec()),
    )?;
    let test_trace = TraceMatrix::from_flat(
        n_test,
        k,
        OUTPUT_DIM as u16,
        test_preds,
        Some(test_labels.to_vec()),
    )?;

    Ok(TrainOutput { model, train_trace, test_trace, metrics, weight_snapshots: snapshots })
}

fn accuracy(predictions: &[Label], labels: &[Label]) -> f64 {
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}
