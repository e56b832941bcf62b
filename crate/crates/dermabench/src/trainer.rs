//! Training loop with Adam, early stopping on validation loss, best-weights
//! checkpointing, and evaluation.

use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use dermabench_core::dataset::Split;
use dermabench_core::loss::PROB_FLOOR;
use dermabench_core::metrics::ScoredSample;
use dermabench_core::{cross_entropy, early_stop_update, one_hot, ClassLabel, ClassWeights, DatasetBundle, EarlyStopState, StopDecision, NUM_CLASSES};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{save_checkpoint, ModelHandle};
use crate::nn::head::Mode;
use crate::nn::params::TensorMap;
use crate::{Error, Result};

/// Adam moment decay rates and epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CategoricalCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    ValidationLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub loss: LossKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: u32,
    #[serde(default)]
    pub monitor: Monitor,
    pub seed: u64,
    #[serde(default)]
    pub class_weights: Option<ClassWeights>,
    #[serde(default)]
    pub adam: AdamParams,
    /// Backbone features for the training and validation splits are computed
    /// once and kept when they fit in this many MiB; otherwise every batch
    /// runs through the backbone.
    #[serde(default = "default_feature_cache_mib")]
    pub feature_cache_mib: usize,
}

fn default_feature_cache_mib() -> usize {
    1024
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            loss: LossKind::CategoricalCrossEntropy,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            monitor: Monitor::ValidationLoss,
            seed: 0,
            class_weights: None,
            adam: AdamParams::default(),
            feature_cache_mib: default_feature_cache_mib(),
        }
    }
}

impl TrainConfig {
    /// Checks the configuration invariants, including a positive learning
    /// rate.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Training(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.validate_shape()
    }

    fn validate_shape(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Training("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Training("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Training("max_epochs must be at least 1".into()));
        }
        if let Some(w) = &self.class_weights {
            w.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub checkpoint_path: PathBuf,
    pub stopped_early: bool,
}

impl TrainRun {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

/// Mean loss over a split and the per-sample probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub samples: Vec<ScoredSample>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let hits = self.samples.iter().filter(|s| s.predicted() == s.label).count();
        hits as f64 / self.samples.len() as f64
    }
}

/// Head inputs for a split: either precomputed or produced batch by batch.
enum Inputs<'a> {
    Cached(Tensor),
    Streamed(&'a Split),
}

impl Inputs<'_> {
    fn prepare<'s>(model: &ModelHandle, split: &'s Split, budget_mib: usize) -> Result<Inputs<'s>> {
        if model.backbone().is_none() {
            return Ok(Inputs::Streamed(split));
        }
        let [c, h, w] = model.config().head_input_shape(model.input_side());
        let bytes = split.len() * c * h * w * 4;
        if bytes > budget_mib << 20 {
            log::info!("features for {} images exceed the cache budget; streaming", split.len());
            return Ok(Inputs::Streamed(split));
        }
        let all: Vec<usize> = (0..split.len()).collect();
        Ok(Inputs::Cached(model.head_inputs(split, &all)?))
    }

    fn batch(&self, model: &ModelHandle, indices: &[usize]) -> Result<Tensor> {
        match self {
            Inputs::Cached(t) => {
                let idx: Vec<u32> = indices.iter().map(|&i| i as u32).collect();
                let idx = Tensor::new(idx.as_slice(), t.device())?;
                Ok(t.index_select(&idx, 0)?)
            }
            Inputs::Streamed(split) => model.head_inputs(split, indices),
        }
    }
}

fn sample_weights(labels: &[ClassLabel], weights: Option<&ClassWeights>) -> Vec<f64> {
    labels.iter().map(|&l| weights.map_or(1.0, |w| w.get(l))).collect()
}

/// Per-sample scores from a (B, 7) probability tensor, renormalized in f64.
fn scored(probs: &Tensor, labels: &[ClassLabel]) -> Result<Vec<ScoredSample>> {
    let rows = probs.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    rows.into_iter()
        .zip(labels)
        .map(|(row, &label)| {
            let z: f64 = row.iter().sum();
            let mut p = [0.0; NUM_CLASSES];
            for (dst, v) in p.iter_mut().zip(&row) {
                *dst = v / z;
            }
            Ok(ScoredSample::new(p, label)?)
        })
        .collect()
}

fn evaluate_inputs(
    model: &mut ModelHandle,
    inputs: &Inputs<'_>,
    split: &Split,
    weights: Option<&ClassWeights>,
    batch_size: usize,
) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Training("cannot evaluate an empty split".into()));
    }
    let all: Vec<usize> = (0..split.len()).collect();
    let mut samples = Vec::with_capacity(split.len());
    let mut total = 0.0;
    for chunk in all.chunks(batch_size.max(1)) {
        let x = inputs.batch(model, chunk)?;
        let probs = model.head_mut().forward(&x, Mode::Eval)?;
        let labels: Vec<ClassLabel> = chunk.iter().map(|&i| split.label(i)).collect();
        for s in scored(&probs, &labels)? {
            let w = weights.map(|w| w.get(s.label));
            total += cross_entropy(&s.scores, &one_hot(s.label), w)?;
            samples.push(s);
        }
    }
    Ok(Evaluation {
        loss: total / split.len() as f64,
        samples,
    })
}

/// Mean (optionally class-weighted) cross-entropy over `split` and the
/// per-sample probabilities, in split order.
pub fn evaluate(model: &mut ModelHandle, split: &Split, class_weights: Option<&ClassWeights>) -> Result<Evaluation> {
    evaluate_inputs(model, &Inputs::Streamed(split), split, class_weights, 64)
}

/// Differentiable batch loss: Σ w_i · −log max(p_i[y_i], floor) / B.
fn batch_loss(probs: &Tensor, targets: &Tensor, weights: &Tensor) -> candle_core::Result<Tensor> {
    let b = probs.dim(0)?;
    let picked = (probs * targets)?.sum(D::Minus1)?;
    let nll = picked.clamp(PROB_FLOOR, 1.0)?.log()?.neg()?;
    (nll * weights)?.sum_all()? / b as f64
}

fn summarize(probs: &Tensor) -> String {
    match probs.flatten_all().and_then(|t| t.to_vec1::<f32>()) {
        Ok(v) => {
            let non_finite = v.iter().filter(|x| !x.is_finite()).count();
            let min = v.iter().copied().filter(|x| x.is_finite()).fold(f32::INFINITY, f32::min);
            format!("{non_finite} non-finite probabilities, smallest finite {min:e}")
        }
        Err(e) => format!("probabilities unavailable: {e}"),
    }
}

/// Trains the model's head on `bundle.train()`, monitoring the validation
/// loss. The best head state is written to `checkpoint_dir/best.ckpt` on
/// every improvement and restored into the model before returning.
///
/// A zero learning rate is accepted here (not by [`TrainConfig::validate`])
/// as a diagnostic: nothing is updated, batch-norm running statistics
/// included, so the validation loss stays fixed.
pub fn train(model: &mut ModelHandle, bundle: &DatasetBundle, config: &TrainConfig, checkpoint_dir: &Path) -> Result<TrainRun> {
    config.validate_shape()?;
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Training(format!(
            "learning_rate must be non-negative, got {}",
            config.learning_rate
        )));
    }
    let train = bundle.train();
    let validation = bundle.validation();
    for (name, s) in [("training", train), ("validation", validation)] {
        if s.is_empty() {
            return Err(Error::Training(format!("the {name} split is empty")));
        }
    }
    if bundle.side() != model.input_side() {
        return Err(Error::Training(format!(
            "images are {0}×{0} but the model was built for {1}×{1}",
            bundle.side(),
            model.input_side()
        )));
    }
    let weights = config.class_weights.as_ref();
    let frozen_before = model.backbone().map(|_| model.frozen_digest()).transpose()?;

    let train_inputs = Inputs::prepare(model, train, config.feature_cache_mib)?;
    let val_inputs = Inputs::prepare(model, validation, config.feature_cache_mib)?;

    let learning = config.learning_rate > 0.0;
    let mut optimizer = AdamW::new(
        model.head().trainable(),
        ParamsAdamW {
            lr: config.learning_rate,
            beta1: config.adam.beta1,
            beta2: config.adam.beta2,
            eps: config.adam.epsilon,
            weight_decay: 0.0,
        },
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xD80F_0E55_5EED_0001);
    let checkpoint_path = checkpoint_dir.join("best.ckpt");
    let device = model.device().clone();

    let mut history = Vec::new();
    let mut state = EarlyStopState::default();
    let mut best: Option<(usize, TensorMap)> = None;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train_inputs.batch(model, chunk)?;
            let labels: Vec<ClassLabel> = chunk.iter().map(|&i| train.label(i)).collect();
            let targets: Vec<f32> = labels.iter().flat_map(|&l| one_hot(l).map(|v| v as f32)).collect();
            let targets = Tensor::from_vec(targets, (chunk.len(), NUM_CLASSES), &device)?;
            let w: Vec<f32> = sample_weights(&labels, weights).iter().map(|&v| v as f32).collect();
            let w = Tensor::from_vec(w, chunk.len(), &device)?;

            let probs = model.head_mut().forward(
                &x,
                Mode::Train {
                    rng: &mut dropout_rng,
                    update_stats: learning,
                },
            )?;
            let loss = batch_loss(&probs, &targets, &w)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b + 1,
                    loss: value,
                    diagnostics: format!("lr {}, batch of {}: {}", config.learning_rate, chunk.len(), summarize(&probs)),
                });
            }
            if learning {
                optimizer.backward_step(&loss)?;
            }
            loss_sum += value * chunk.len() as f64;
            let predicted = probs.argmax(D::Minus1)?.to_vec1::<u32>()?;
            hits += predicted
                .iter()
                .zip(&labels)
                .filter(|(p, l)| **p as usize == l.index())
                .count();
        }
        let val = evaluate_inputs(model, &val_inputs, validation, weights, config.batch_size.max(64))?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            validation_loss: val.loss,
            train_accuracy: hits as f64 / train.len() as f64,
            validation_accuracy: val.accuracy(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.4} | val loss {:.4} val acc {:.4}",
            record.train_loss,
            record.train_accuracy,
            record.validation_loss,
            record.validation_accuracy
        );
        history.push(record);
        let (next, decision) = early_stop_update(state, val.loss, config.patience);
        state = next;
        match decision {
            StopDecision::Improved => {
                let snap = model.head().snapshot()?;
                save_checkpoint(&snap, &checkpoint_path)?;
                best = Some((epoch, snap));
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, snap) = best.ok_or_else(|| Error::Training("no epoch produced a finite validation loss".into()))?;
    let restored: std::collections::HashMap<String, Tensor> = snap.into_iter().collect();
    model.head_mut().load_state(&restored)?;

    if let Some(before) = frozen_before {
        let after = model.frozen_digest()?;
        if before != after {
            return Err(Error::Training("backbone parameters changed during training".into()));
        }
    }
    Ok(TrainRun {
        config: config.clone(),
        history,
        best_epoch,
        checkpoint_path,
        stopped_early,
    })
}
