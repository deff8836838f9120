use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NeuralError, Scalar, TrainingConfig, TransformerClassifier};
use crate::baselines::derive_seed;
use crate::eval::{confusion, metrics};
use crate::textproc::EncodedPair;

// Stream tags keep shuffle and dropout seeds apart.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Snapshot with the best validation accuracy.
    pub model: TransformerClassifier<T>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub steps: u64,
}

pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("epoch log serializes") + "\n")
        .collect()
}

/// Validation metrics in percent.
pub fn evaluate_split<T: Scalar>(
    model: &TransformerClassifier<T>,
    pairs: &[EncodedPair],
) -> Result<crate::eval::Metrics, NeuralError> {
    let mut preds = Vec::with_capacity(pairs.len());
    let mut gold = Vec::with_capacity(pairs.len());
    for p in pairs {
        gold.push(p.label.ok_or(NeuralError::MissingLabel)?);
        preds.push(model.predict(p)?.label);
    }
    let cm = confusion(&preds, &gold).expect("aligned by construction");
    Ok(metrics(&cm))
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grads: &[T], cfg: &TrainingConfig) {
        self.t += 1;
        let conv = |x: f64| T::from(x).expect("hyperparameter representable");
        let (b1, b2) = (conv(cfg.beta1), conv(cfg.beta2));
        let lr = conv(cfg.learning_rate);
        let eps = conv(cfg.epsilon);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

fn clip<T: Scalar>(grads: &mut [T], max_norm: f64) {
    let norm = grads.iter().map(|&g| g * g).sum::<T>().sqrt();
    let max = T::from(max_norm).expect("clip representable");
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
}

/// Adam on mean cross-entropy with seeded per-epoch shuffling, keeping the
/// parameter snapshot with the highest validation accuracy (ties keep the
/// earlier epoch).
pub fn train<T: Scalar>(
    mut model: TransformerClassifier<T>,
    train: &[EncodedPair],
    validation: &[EncodedPair],
    cfg: &TrainingConfig,
) -> Result<TrainOutcome<T>, NeuralError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NeuralError::EmptySplit("train"));
    }
    if validation.is_empty() {
        return Err(NeuralError::EmptySplit("validation"));
    }
    if train.iter().chain(validation).any(|p| p.label.is_none()) {
        return Err(NeuralError::MissingLabel);
    }
    let mut adam = Adam::new(model.num_params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<T>)> = None;
    let mut step = 0u64;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ SHUFFLE_STREAM, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let seed = derive_seed(cfg.seed ^ DROPOUT_STREAM, step);
            let (loss, mut grads) = model.loss_and_grad(&batch, Some(seed))?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(NeuralError::NonFiniteLoss { epoch, step, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            if let Some(c) = cfg.grad_clip {
                clip(&mut grads, c);
            }
            adam.step(model.params_mut(), &grads, cfg);
        }
        let val = evaluate_split(&model, validation)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy: val.accuracy,
            val_precision: val.precision,
            val_recall: val.recall,
            val_f1: val.f1,
        });
        if best.as_ref().map_or(true, |(acc, _, _)| val.accuracy > *acc) {
            best = Some((val.accuracy, epoch, model.params().to_vec()));
        }
        let (best_acc, best_epoch, _) = best.as_ref().expect("set after first epoch");
        // A perfect validation score cannot be improved on.
        if let Some(patience) = cfg.early_stopping_patience {
            if *best_acc >= 100.0 || epoch - best_epoch >= patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.params_mut().copy_from_slice(&params);
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        steps: step,
    })
}
