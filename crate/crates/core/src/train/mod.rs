//! Half-MSE regression loss, Adam with exponential learning-rate decay,
//! early stopping on validation loss.

mod adam;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{is_trainable, Mode, BN_MOMENTUM};
use crate::scalar::Scalar;
use crate::signal::{NormStats, WindowedDataset};
use crate::tensor::Tensor;
use crate::zoo::Model;

pub use adam::{adam_step, clip_global_norm, lr_at, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    /// Optimizer steps (mini-batches) per factor of `decay_rate`.
    pub decay_steps: u64,
    pub decay_rate: f64,
    /// Epochs without a validation improvement larger than `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Stop as soon as an epoch's mean training loss falls below this.
    pub target_train_loss: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            initial_lr: 1e-3,
            decay_steps: 30_000,
            decay_rate: 0.2,
            patience: 1000,
            min_delta: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            clip_norm: Some(5.0),
            target_train_loss: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if self.batch_size == 0 || self.max_epochs == 0 || self.decay_steps == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs, decay_steps and patience must be positive");
        }
        if !(self.initial_lr > 0.0) || !(self.decay_rate > 0.0 && self.decay_rate < 1.0) {
            return bad("initial_lr must be positive and decay_rate in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_epsilon > 0.0) {
            return bad("beta1, beta2 must be in [0, 1) and adam_epsilon positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) || !(self.min_delta >= 0.0) {
            return bad("clip_norm must be positive and min_delta non-negative");
        }
        Ok(())
    }
}

/// `(1/2N) Σ (gt − pred)²` on the tape; `pred` has shape `[N]`.
pub fn mse_loss<F: Scalar>(tape: &mut Tape<F>, pred: Var, gt: &[f64]) -> Result<Var> {
    let shape = tape.shape(pred)?.to_vec();
    if shape != [gt.len()] || gt.is_empty() {
        return Err(Error::Shape { op: "mse_loss", lhs: shape, rhs: vec![gt.len()] });
    }
    let target = tape.constant(Tensor::from_f64([gt.len()], gt)?);
    let err = tape.sub(pred, target)?;
    let sq = tape.mul(err, err)?;
    let total = tape.sum(sq)?;
    tape.scale(total, F::of(0.5 / gt.len() as f64))
}

/// Plain-number form of [`mse_loss`].
pub fn mse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::Shape { op: "mse", lhs: vec![pred.len()], rhs: vec![gt.len()] });
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (g - p).powi(2)).sum::<f64>() / (2.0 * gt.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the epoch's mini-batch losses.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Wall time of the epoch.
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    TargetTrainLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
}

impl TrainHistory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "epoch,train_loss,val_loss,lr,seconds")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Patience bookkeeping on the monitored loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    wait: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    /// Strictly below every earlier value.
    pub best: bool,
    /// `patience` consecutive values without an improvement beyond `min_delta`.
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { patience, min_delta, best: f64::INFINITY, wait: 0 }
    }

    pub fn observe(&mut self, loss: f64) -> Observation {
        let best = loss < self.best;
        if best && self.best - loss > self.min_delta {
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        if best {
            self.best = loss;
        }
        Observation { best, stop: self.wait >= self.patience }
    }
}

/// Half-MSE of unclamped infer-mode predictions.
pub fn eval_loss<F: Scalar>(model: &Model<F>, data: &WindowedDataset) -> Result<f64> {
    mse(&model.predict_raw(&data.windows())?, &data.labels())
}

pub fn fit<F: Scalar>(
    model: &mut Model<F>,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    fit_with(model, train, val, cfg, |_| {})
}

/// Trains `model` in place and leaves it holding the best-validation
/// weights. Normalisation statistics are refitted on `train`.
/// `on_epoch` sees each record as it is produced.
pub fn fit_with<F: Scalar>(
    model: &mut Model<F>,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(format!("empty split: {} train, {} validation windows", train.len(), val.len())));
    }
    for d in [train, val] {
        if d.window_size != model.window_size {
            return Err(Error::WindowSize { expected: model.window_size, found: d.window_size });
        }
    }
    model.norm = Some(NormStats::fit(train.entries.iter().map(|e| e.window.as_slice()))?);

    let keys: Vec<(usize, String)> = model
        .params
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.iter().filter(|(k, _)| is_trainable(k)).map(move |(k, _)| (i, k.to_string())))
        .collect();
    let names: Vec<String> = keys.iter().map(|(i, k)| format!("layers.{i}.{k}")).collect();
    let mut state = AdamState::new(keys.iter().map(|(i, k)| model.params[*i].get(k).expect("listed")));

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let labels = train.labels();

    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut stop = StopReason::MaxEpochs;
    let mut step: u64 = 0;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = lr_at(step, cfg);
        for batch in order.chunks(cfg.batch_size) {
            let windows: Vec<&[f64]> = batch.iter().map(|&i| train.entries[i].window.as_slice()).collect();
            let gt: Vec<f64> = batch.iter().map(|&i| labels[i]).collect();
            let x = model.input_tensor(&windows)?;
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let pass = model.forward(&mut tape, xv, Mode::Train, &mut dropout_rng)?;
            let loss = mse_loss(&mut tape, pass.output, &gt)?;
            let value = tape.value(loss)?.item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step: step + 1 });
            }
            loss_sum += value * batch.len() as f64;
            let mut grads = tape.backward(loss)?;
            let mut g: Vec<Tensor<F>> = keys
                .iter()
                .map(|(i, k)| {
                    let var = pass.bound[*i].var(k)?;
                    Ok(grads.take(var).unwrap_or_else(|| Tensor::zeros(model.params[*i].get(k).expect("listed").shape().to_vec())))
                })
                .collect::<Result<_>>()?;
            if let Some(c) = cfg.clip_norm {
                if g.iter().all(|t| t.data().iter().all(|x| x.is_finite())) {
                    clip_global_norm(&mut g, c);
                }
            }
            lr = lr_at(step, cfg);
            // same (layer, name) order as `keys`
            let mut params: Vec<&mut Tensor<F>> = model
                .params
                .iter_mut()
                .flat_map(|p| p.iter_mut().filter(|(k, _)| is_trainable(k)).map(|(_, t)| t))
                .collect();
            let grefs: Vec<&Tensor<F>> = g.iter().collect();
            adam_step(&mut params, &grefs, &names, &mut state, lr, cfg)?;
            model.apply_batch_stats(&pass.stats, BN_MOMENTUM)?;
            step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = eval_loss(model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step });
        }
        let rec = EpochRecord { epoch, train_loss, val_loss, lr, seconds: started.elapsed().as_secs_f64() };
        on_epoch(&rec);
        epochs.push(rec);

        let seen = stopper.observe(val_loss);
        if seen.best {
            best = (val_loss, epoch, model.params.clone());
        }
        if cfg.target_train_loss.is_some_and(|t| train_loss < t) {
            stop = StopReason::TargetTrainLoss;
            break;
        }
        if seen.stop {
            stop = StopReason::EarlyStopping;
            break;
        }
    }
    let (best_val_loss, best_epoch, params) = best;
    model.params = params;
    Ok(TrainHistory { epochs, stop, best_epoch, best_val_loss, steps: step })
}
