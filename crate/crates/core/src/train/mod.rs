//! Mini-batch training with early stopping, and model evaluation.
//!
//! Windows are standardized per variate by their own lookback statistics;
//! loss and metrics live in that normalized space. Augmented tokens are
//! recomputed for every window on every pass. Stochastic strategies draw
//! from a stream derived from `(seed, epoch, window index)`.

mod metrics;
mod optim;

pub use metrics::{
    correlation_matrix, evaluate_with, mae, mse, pearson_matrix, Correlation, EvalReport, EVAL_BATCH,
};
pub use optim::{clip_global_norm, global_norm, Adam};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{self, derive_seed, AugmentationConfig, AugmentedTokens};
use crate::data::{MultivariateSeries, Segment, Window};
use crate::error::{Error, Result};
use crate::model::{self, InvertedModelParams, ModelConfig, TokenBatch};
use crate::tensor::{Tape, Tensor};

/// Epoch tag used for augmentation streams outside training.
pub const EVAL_EPOCH: u64 = u64::MAX;
const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm bound; off when `None`.
    pub gradient_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            gradient_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be >= 1"));
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0) {
                return Err(Error::config(format!("gradient_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation MSE.
    pub params: InvertedModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    /// Training loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Standardized stride-1 windows of a segment.
pub fn segment_windows(series: &MultivariateSeries, segment: Segment, lookback: usize, horizon: usize) -> Vec<Window> {
    (0..segment.window_count(lookback, horizon))
        .map(|i| segment.window(series, i, lookback, horizon).standardize())
        .collect()
}

/// Augmentation of window `index` during `epoch`.
pub fn window_augmentation(
    x: &Tensor,
    config: &AugmentationConfig,
    base_seed: u64,
    epoch: u64,
    index: usize,
) -> Result<AugmentedTokens> {
    if config.strategy.is_stochastic() {
        let seed = derive_seed(base_seed ^ config.seed, epoch, index as u64);
        augment::augment(x, &config.with_seed(seed))
    } else {
        augment::augment(x, config)
    }
}

/// Stacks targets as `(B·N)×S`, matching the forecast layout.
fn stack_targets(windows: &[&Window]) -> Result<Tensor> {
    let (s, n) = (windows[0].y.rows(), windows[0].y.cols());
    let mut data = Vec::with_capacity(windows.len() * n * s);
    for w in windows {
        data.extend(w.y.transpose()?.into_data());
    }
    Tensor::matrix(windows.len() * n, s, data)
}

/// Forecasts a chunk of windows whose first element has global index
/// `start`, augmenting each with the evaluation stream.
pub fn predict_windows(
    params: &InvertedModelParams,
    config: &ModelConfig,
    windows: &[Window],
    start: usize,
    base_seed: u64,
) -> Result<Vec<Tensor>> {
    let augs = windows
        .iter()
        .enumerate()
        .map(|(i, w)| window_augmentation(&w.x, &config.augmentation, base_seed, EVAL_EPOCH, start + i))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<&Tensor> = windows.iter().map(|w| &w.x).collect();
    model::predict_batch(params, config, &xs, &augs)
}

/// Scores `params` on standardized windows.
pub fn evaluate(
    params: &InvertedModelParams,
    windows: &[Window],
    config: &ModelConfig,
    base_seed: u64,
) -> Result<EvalReport> {
    evaluate_with(windows, |chunk, start| {
        predict_windows(params, config, chunk, start, base_seed)
    })
}

/// Trains from scratch on `train`, selecting the epoch with the best
/// validation MSE.
pub fn train_model(
    train: &[Window],
    val: &[Window],
    config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_model_with(train, val, config, train_config, &mut |_| {})
}

/// As [`train_model`], reporting each finished epoch to `observer`.
pub fn train_model_with(
    train: &[Window],
    val: &[Window],
    config: &ModelConfig,
    train_config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    train_config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::contract("training needs at least one train window"))?;
    if val.is_empty() {
        return Err(Error::contract("training needs at least one validation window"));
    }
    let n = first.x.cols();
    let seed = train_config.seed;
    let mut params = InvertedModelParams::init(config, n, seed)?;
    let mut adam = Adam::new(train_config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, usize, InvertedModelParams)> = None;
    let mut wait = 0;

    for epoch in 1..=train_config.max_epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64, SHUFFLE_STREAM));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for (b, idx) in order.chunks(train_config.batch_size).enumerate() {
            let windows: Vec<&Window> = idx.iter().map(|&i| &train[i]).collect();
            let augs = idx
                .iter()
                .map(|&i| window_augmentation(&train[i].x, &config.augmentation, seed, epoch as u64, i))
                .collect::<Result<Vec<_>>>()?;
            let xs: Vec<&Tensor> = windows.iter().map(|w| &w.x).collect();
            let batch = TokenBatch::new(&xs, &augs)?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let pred = model::forward_tape(&mut tape, &bound, config, &batch, None)?;
            let target = tape.leaf(stack_targets(&windows)?);
            let loss_var = tape.mse_loss(pred, target)?;
            let loss = tape.value(loss_var).data()[0];
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            let grads = tape.backward(loss_var)?;
            let mut grads = bound.gradients(&grads);
            if let Some(clip) = train_config.gradient_clip {
                clip_global_norm(&mut grads, clip);
            }
            adam.step(&mut params, &grads)?;
            step_losses.push(loss);
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let val_mse = evaluate(&params, val, config, seed)?.mse;
        if !val_mse.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                loss: val_mse,
            });
        }
        let record = EpochRecord {
            epoch,
            train_mse: loss_sum / seen as f64,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        };
        observer(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(v, _, _)| val_mse < *v) {
            best = Some((val_mse, epoch, params.clone()));
            wait = 0;
        } else {
            wait += 1;
            if wait >= train_config.patience {
                break;
            }
        }
    }
    let (best_val_mse, best_epoch, params) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        best_val_mse,
        step_losses,
    })
}
