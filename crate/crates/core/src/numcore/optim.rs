//! Adam with bias correction, and the warmup / inverse-square-root schedule.

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.98;
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Moment estimates for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self { step: 0, m: Vec::new(), v: Vec::new(), beta1: DEFAULT_BETA1, beta2: DEFAULT_BETA2, epsilon: DEFAULT_EPSILON }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moments of one parameter, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        let (m, v) = (self.m.get(id.index())?, self.v.get(id.index())?);
        (!m.is_empty()).then_some((m.as_slice(), v.as_slice()))
    }

    /// One Adam update of the listed parameters from their stored gradients.
    ///
    /// Parameters that are not listed (masked or unsampled blocks) keep both
    /// their values and their moments.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        for &id in ids {
            let t = store.get(id);
            let g = t.grad().ok_or_else(|| Error::Shape(format!("parameter {} has no gradient", id.index())))?;
            if g.len() != t.numel() {
                return Err(Error::Shape("gradient length differs from parameter".into()));
            }
            if let Some(p) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient element {p} of parameter {}", id.index())));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for &id in ids {
            let i = id.index();
            if self.m.len() <= i {
                self.m.resize(i + 1, Vec::new());
                self.v.resize(i + 1, Vec::new());
            }
            let tensor = store.get_mut(id);
            let n = tensor.numel();
            if self.m[i].len() != n {
                self.m[i] = vec![0.0; n];
                self.v[i] = vec![0.0; n];
            }
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((w, g), (mj, vj)) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut().zip(v.iter_mut())) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * g;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * g * g;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Linear warmup followed by inverse-square-root decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base_lr: 0.05, warmup_steps: 100 }
    }
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64) -> Result<Self> {
        if !(base_lr > 0.0) || warmup_steps == 0 {
            return Err(Error::Config(format!("invalid schedule base_lr={base_lr} warmup={warmup_steps}")));
        }
        Ok(Self { base_lr, warmup_steps })
    }

    /// `base · min(t/W, 1) / sqrt(max(t, W))`, peaking at `base / sqrt(W)` when `t = W`.
    pub fn lr_at(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::ZeroStep);
        }
        let w = self.warmup_steps as f64;
        let t = t as f64;
        Ok(self.base_lr * (t / w).min(1.0) / t.max(w).sqrt())
    }
}
