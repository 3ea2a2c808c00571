//! Mini-batch training with Adam, and accuracy evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classify, Transformer};
use crate::numcore::{AdamState, LrSchedule, Tape};
use crate::rng::{self, Rng};
use crate::tasks::{Batch, Dataset, TaskData, PAD};

/// Batch size used for evaluation passes; it does not affect results.
const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub warmup: u64,
    pub base_lr: f64,
    pub batch_size: usize,
    /// Validation interval in steps; 0 validates only at the end.
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 1000, warmup: 100, base_lr: 0.05, batch_size: 32, eval_every: 100, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        LrSchedule::new(self.base_lr, self.warmup).map(|_| ())
    }
}

/// Fraction of `data` that `model` classifies correctly.
pub fn accuracy(model: &impl Classify, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for batch in data.batches(EVAL_BATCH) {
        let pred = model.predict(&batch)?;
        correct += pred.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Optimizer state plus the data and randomness cursors of one training run.
/// Steps are counted globally, so interleaved calls to [`Trainer::run`]
/// continue one schedule.
#[derive(Clone, Debug)]
pub struct Trainer {
    adam: AdamState,
    schedule: LrSchedule,
    batch_size: usize,
    noise: Rng,
    shuffle: Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            adam: AdamState::new(),
            schedule: LrSchedule::new(cfg.base_lr, cfg.warmup)?,
            batch_size: cfg.batch_size,
            noise: rng::stream(rng::derive_seed(cfg.seed, "train/noise"), 0),
            shuffle: rng::stream(rng::derive_seed(cfg.seed, "train/shuffle"), 0),
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.adam.step_count()
    }

    fn next_batch(&mut self, data: &Dataset) -> Batch {
        if self.order.len() != data.len() {
            self.order = (0..data.len()).collect();
            self.cursor = data.len();
        }
        let mut picked = Vec::with_capacity(self.batch_size);
        while picked.len() < self.batch_size.min(data.len()) {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.shuffle);
                self.cursor = 0;
            }
            picked.push(&data.examples[self.order[self.cursor]]);
            self.cursor += 1;
        }
        Batch::from_examples(picked, PAD)
    }

    /// One optimizer step on the next batch; returns the batch loss.
    pub fn step(&mut self, model: &mut Transformer, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let batch = self.next_batch(data);
        let t = self.adam.step_count() + 1;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch, Some(&mut self.noise))?;
        let loss = tape.cross_entropy(fwd.logits, &batch.labels);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged { step: t, loss: value });
        }
        model.params_mut().zero_grad();
        tape.backward(loss, model.params_mut())?;
        let ids = model.trainable_ids(&fwd.used)?;
        let lr = self.schedule.lr_at(t)?;
        self.adam.step(model.params_mut(), &ids, lr)?;
        Ok(value)
    }

    pub fn run(&mut self, model: &mut Transformer, data: &Dataset, steps: u64) -> Result<Vec<f64>> {
        (0..steps).map(|_| self.step(model, data)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    /// Mean training loss since the previous point (NaN at step 0).
    pub loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_val: f64,
    pub best_step: u64,
    pub curve: Vec<CurvePoint>,
}

/// Trains with periodic validation and leaves `model` holding the parameters
/// with the best validation accuracy (earliest on ties).
pub fn train_model(model: &mut Transformer, task: &TaskData, cfg: &TrainConfig) -> Result<TrainReport> {
    let mut trainer = Trainer::new(cfg)?;
    let mut best = (accuracy(model, &task.val)?, 0u64);
    let mut best_params = model.snapshot();
    let mut curve = vec![CurvePoint { step: 0, loss: f64::NAN, val_acc: best.0 }];
    let mut losses = Vec::new();
    for step in 1..=cfg.steps {
        losses.push(trainer.step(model, &task.train)?);
        let due = (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps;
        if due {
            let val = accuracy(model, &task.val)?;
            curve.push(CurvePoint { step, loss: losses.iter().sum::<f64>() / losses.len() as f64, val_acc: val });
            losses.clear();
            if val > best.0 {
                best = (val, step);
                best_params = model.snapshot();
            }
        }
    }
    model.restore(&best_params)?;
    Ok(TrainReport { best_val: best.0, best_step: best.1, curve })
}
