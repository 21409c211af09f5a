//! Cost-sensitive training with early stopping on validation F1-Macro.
//!
//! One optimizer step is taken per book: a whole book is one variable-length
//! sequence and there is no padding or cross-book batching.

mod config;
mod loss;
mod optim;

pub use config::{ClassWeights, ModelConfig, TrainConfig};
pub use loss::{class_weights_from_frequencies, label_counts, weighted_cross_entropy};
pub use optim::AdamW;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{argmax_labels, gather_inputs, CosmoModel, PageInputs, Stores};
use crate::nn::{Module, Rng};
use crate::stream::{PageLabel, PageStream, NUM_CLASSES};
use crate::tensor::Scalar;

/// A book with its inputs already looked up.
#[derive(Clone, Debug)]
pub struct Example<T: Scalar = f32> {
    pub book_id: String,
    pub inputs: PageInputs<T>,
    pub labels: Vec<PageLabel>,
}

pub fn prepare_examples<T: Scalar>(
    model: &CosmoModel<T>,
    streams: &[PageStream],
    stores: &Stores,
) -> Result<Vec<Example<T>>> {
    streams
        .iter()
        .map(|s| {
            Ok(Example {
                book_id: s.book_id.clone(),
                inputs: gather_inputs(model, s, stores)?,
                labels: s.gold_labels()?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's books (dropout active).
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1_macro: f64,
    /// Whether this epoch became the new best checkpoint.
    pub improved: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    PerfectValidation,
}

/// Loop state between epochs.
#[derive(Clone, Debug)]
pub struct TrainState<T: Scalar = f32> {
    pub epoch: usize,
    pub best_val_metric: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub rng: Rng,
    pub params: CosmoModel<T>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar = f32> {
    /// Parameters from the best validation epoch.
    pub model: CosmoModel<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1_macro: f64,
    pub weights: [f64; NUM_CLASSES],
    pub stop: StopReason,
}

fn resolve_weights<T: Scalar>(cfg: &TrainConfig, train: &[Example<T>]) -> Result<[f64; NUM_CLASSES]> {
    match &cfg.class_weights {
        ClassWeights::Fixed(w) => Ok(*w),
        ClassWeights::Auto => {
            class_weights_from_frequencies(&label_counts(train.iter().flat_map(|e| e.labels.iter().copied())))
        }
    }
}

/// Eval-mode weighted loss and F1-Macro pooled over all pages of `books`.
pub fn validate<T: Scalar>(
    model: &CosmoModel<T>,
    books: &[Example<T>],
    weights: &[f64; NUM_CLASSES],
) -> Result<(f64, f64)> {
    let mut cm = ConfusionMatrix::default();
    let mut loss = 0.0;
    for ex in books {
        let logits = model.logits(&ex.inputs)?;
        loss += weighted_cross_entropy(&logits, &ex.labels, weights)?.0;
        cm.add(&ex.labels, &argmax_labels(&logits))?;
    }
    Ok((loss / books.len() as f64, cm.class_scores().f1_macro))
}

pub fn train<T: Scalar>(
    model: CosmoModel<T>,
    train: &[Example<T>],
    val: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(model, train, val, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar>(
    model: CosmoModel<T>,
    train: &[Example<T>],
    val: &[Example<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training needs at least one train and one validation book".into()));
    }
    let weights = resolve_weights(cfg, train)?;
    let mut opt = AdamW::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut state = TrainState {
        epoch: 0,
        best_val_metric: f64::NEG_INFINITY,
        best_epoch: 0,
        epochs_since_improvement: 0,
        rng: Rng::seed_from_u64(cfg.seed),
        params: model.clone(),
    };
    let mut model = model;
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let stop = loop {
        state.epoch += 1;
        order.shuffle(&mut state.rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let ex = &train[i];
            let diverged = || Error::Diverged {
                epoch: state.epoch,
                book_id: ex.book_id.clone(),
            };
            let (logits, tape) = match model.forward(&ex.inputs, Some(&mut state.rng)) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            let (loss, dlogits) = match weighted_cross_entropy(&logits, &ex.labels, &weights) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged());
            }
            epoch_loss += loss;
            grads.zero();
            model.backward(&tape, &dlogits, &mut grads)?;
            drop(tape);
            opt.step(&mut model, &grads)?;
        }
        let (val_loss, val_f1) = validate(&model, val, &weights)?;
        let improved = val_f1 > state.best_val_metric;
        if improved {
            state.best_val_metric = val_f1;
            state.best_epoch = state.epoch;
            state.epochs_since_improvement = 0;
            state.params = model.clone();
        } else {
            state.epochs_since_improvement += 1;
        }
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
            val_f1_macro: val_f1,
            improved,
        };
        on_epoch(&record);
        history.push(record);
        if cfg.stop_on_perfect && val_f1 >= 1.0 {
            break StopReason::PerfectValidation;
        }
        if state.epochs_since_improvement >= cfg.patience {
            break StopReason::Patience;
        }
        if state.epoch >= cfg.max_epochs {
            break StopReason::MaxEpochs;
        }
    };
    Ok(TrainOutcome {
        model: state.params,
        history,
        best_epoch: state.best_epoch,
        best_val_f1_macro: state.best_val_metric,
        weights,
        stop,
    })
}

/// Deterministic train/validation split: the last `⌈n · fraction⌉` books
/// (at least one) go to validation.
pub fn split_books<S: Clone>(books: &[S], val_fraction: f64) -> Result<(Vec<S>, Vec<S>)> {
    if books.len() < 2 {
        return Err(Error::Config("need at least two books to split off a validation set".into()));
    }
    let n_val = ((books.len() as f64 * val_fraction).ceil() as usize).clamp(1, books.len() - 1);
    let cut = books.len() - n_val;
    Ok((books[..cut].to_vec(), books[cut..].to_vec()))
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    crate::stream::write_jsonl(path.as_ref(), history)
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    crate::stream::read_jsonl(path.as_ref())
}
