//! Mini-batch training loop shared by every learned predictor.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Adam, AdamConfig, ParameterSet, StepOutcome};
use crate::trajdata::SequenceWindow;

/// A model with a differentiable per-window loss.
pub trait Trainable: Clone + Send + Sync {
    fn params(&self) -> &ParameterSet;
    fn params_mut(&mut self) -> &mut ParameterSet;
    /// Summed (weighted) loss and term count of each window, and the gradient
    /// of the total loss.
    fn batch_gradient(&self, windows: &[&SequenceWindow]) -> Result<(Vec<(f64, usize)>, ParameterSet)>;
    /// Summed loss and term count of each window, without a gradient.
    fn batch_loss(&self, windows: &[&SequenceWindow]) -> Result<Vec<(f64, usize)>>;
}

/// Windows per forward pass when only losses are needed.
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    /// Threads sharing each batch. Every worker takes a fixed contiguous
    /// chunk and chunks are reduced in order, so results are reproducible for
    /// a given worker count.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            adam: AdamConfig::default(),
            lr_decay: 0.97,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::config("adam.lr", "must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay", "must be in (0, 1]"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss per term over the epoch's training windows (pre-update).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub steps: usize,
    pub skipped_steps: usize,
    pub clipped_steps: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters at the epoch with the lowest validation loss (training loss
    /// when there is no validation set).
    pub best: M,
    pub best_epoch: usize,
    pub last: M,
    pub history: Vec<EpochReport>,
}

/// Splits windows into training and validation sets: for each recording, the
/// chronologically last `fraction` of its windows are held out.
pub fn split_validation(windows: Vec<SequenceWindow>, fraction: f64) -> (Vec<SequenceWindow>, Vec<SequenceWindow>) {
    let mut by_recording: Vec<(String, Vec<SequenceWindow>)> = Vec::new();
    for w in windows {
        match by_recording.iter_mut().find(|(id, _)| *id == w.recording_id) {
            Some((_, list)) => list.push(w),
            None => by_recording.push((w.recording_id.clone(), vec![w])),
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (_, mut list) in by_recording {
        list.sort_by_key(|w| w.start_frame);
        let n = list.len();
        let held = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
        let tail = list.split_off(n - held);
        train.extend(list);
        val.extend(tail);
    }
    (train, val)
}

pub struct Trainer {
    pub config: TrainConfig,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let pool = if config.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| Error::config("workers", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self { config, pool })
    }

    /// Gradient of the summed loss of `batch` and the per-window losses.
    fn batch_gradient<M: Trainable>(&self, model: &M, batch: &[&SequenceWindow]) -> Result<(Vec<(f64, usize)>, ParameterSet)> {
        let pool = match &self.pool {
            Some(pool) if batch.len() > 1 => pool,
            _ => return model.batch_gradient(batch),
        };
        let size = batch.len().div_ceil(self.config.workers);
        let parts: Vec<Result<(Vec<(f64, usize)>, ParameterSet)>> =
            pool.install(|| batch.par_chunks(size).map(|c| model.batch_gradient(c)).collect());
        let mut losses = Vec::with_capacity(batch.len());
        let mut total: Option<ParameterSet> = None;
        for part in parts {
            let (l, g) = part?;
            losses.extend(l);
            match &mut total {
                Some(t) => t.add_assign(&g),
                None => total = Some(g),
            }
        }
        Ok((losses, total.expect("non-empty batch")))
    }

    /// Mean loss per term over `windows`.
    pub fn evaluate<M: Trainable>(&self, model: &M, windows: &[SequenceWindow]) -> Result<Option<f64>> {
        if windows.is_empty() {
            return Ok(None);
        }
        let refs: Vec<&SequenceWindow> = windows.iter().collect();
        let results: Vec<Result<Vec<(f64, usize)>>> = match &self.pool {
            Some(pool) => pool.install(|| refs.par_chunks(EVAL_CHUNK).map(|c| model.batch_loss(c)).collect()),
            None => refs.chunks(EVAL_CHUNK).map(|c| model.batch_loss(c)).collect(),
        };
        let mut total = 0.0;
        let mut terms = 0;
        for r in results {
            for (l, n) in r? {
                total += l;
                terms += n;
            }
        }
        Ok((terms > 0).then(|| total / terms as f64))
    }

    /// Trains `model` on `train`, reporting validation loss on `val` after
    /// every epoch. `on_epoch` sees each report as it is produced.
    pub fn train<M: Trainable>(
        &self,
        mut model: M,
        train: &[SequenceWindow],
        val: &[SequenceWindow],
        mut on_epoch: impl FnMut(&EpochReport),
    ) -> Result<TrainOutcome<M>> {
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let cfg = self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(model.params(), cfg.adam);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut best: Option<(f64, usize, M)> = None;

        for epoch in 1..=cfg.epochs {
            let started = Instant::now();
            let lr = cfg.adam.lr * cfg.lr_decay.powi(epoch as i32 - 1);
            order.shuffle(&mut rng);
            let (mut total, mut terms) = (0.0, 0usize);
            let (mut steps, mut skipped, mut clipped) = (0, 0, 0);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&SequenceWindow> = chunk.iter().map(|&i| &train[i]).collect();
                let (losses, mut grads) = self.batch_gradient(&model, &batch)?;
                grads.scale(1.0 / batch.len() as f64);
                for (w, &(loss, n)) in batch.iter().zip(&losses) {
                    if !loss.is_finite() {
                        return Err(Error::Divergence {
                            epoch,
                            window: w.id.clone(),
                            message: format!("loss {loss}"),
                        });
                    }
                    total += loss;
                    terms += n;
                }
                match adam.step(model.params_mut(), &mut grads, lr) {
                    StepOutcome::Applied { clipped: c, .. } => {
                        steps += 1;
                        clipped += usize::from(c);
                    }
                    StepOutcome::Skipped => skipped += 1,
                }
            }
            if !model.params().is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    window: String::new(),
                    message: "parameters became non-finite".into(),
                });
            }
            let train_loss = total / terms.max(1) as f64;
            let val_loss = self.evaluate(&model, val)?;
            let report = EpochReport {
                epoch,
                lr,
                train_loss,
                val_loss,
                steps,
                skipped_steps: skipped,
                clipped_steps: clipped,
                seconds: started.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {epoch}: train {train_loss:.4} val {} lr {lr:.5}",
                val_loss.map_or("-".to_string(), |v| format!("{v:.4}"))
            );
            on_epoch(&report);
            let score = val_loss.unwrap_or(train_loss);
            if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                best = Some((score, epoch, model.clone()));
            }
            history.push(report);
        }
        let (_, best_epoch, best) = best.expect("at least one epoch ran");
        Ok(TrainOutcome {
            best,
            best_epoch,
            last: model,
            history,
        })
    }
}
