//! Parameter updates: Adam, RMSProp, elementwise hard clipping and
//! reduce-on-plateau learning-rate decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, ParamStore};
use crate::{Error, Result};

pub const CLIP_LO: f64 = -5.0;
pub const CLIP_HI: f64 = 5.0;

/// Clamps every gradient entry into `[lo, hi]`.
pub fn clip_gradients(grads: &mut Gradients, lo: f64, hi: f64) {
    for g in grads.values_mut() {
        clip_slice(g, lo, hi);
    }
}

pub fn clip_slice(g: &mut [f64], lo: f64, hi: f64) {
    for v in g {
        *v = v.clamp(lo, hi);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { decay: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp { decay: 0.9, eps: 1e-8 }
    }
}

/// Moment accumulators keyed by parameter name, the step counter and the
/// current learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    /// Adam first moment; unused by RMSProp.
    pub first: BTreeMap<String, Vec<f64>>,
    /// Adam second moment or RMSProp squared-gradient average.
    pub second: BTreeMap<String, Vec<f64>>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be > 0")));
        }
        Ok(OptimState {
            kind,
            lr,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.step += 1;
        for (name, g) in grads {
            let p = params
                .param_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter {name}")))?;
            if p.len() != g.len() {
                return Err(Error::shape(format!(
                    "gradient for {name} has {} entries, parameter has {}",
                    g.len(),
                    p.len()
                )));
            }
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    adam_update(p.data_mut(), g, m, v, self.step, self.lr, beta1, beta2, eps);
                }
                OptimizerKind::RmsProp { decay, eps } => {
                    let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    rmsprop_update(p.data_mut(), g, v, self.lr, decay, eps);
                }
            }
        }
        Ok(())
    }
}

/// Bias-corrected Adam update for one parameter buffer at step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

pub fn rmsprop_update(p: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, decay: f64, eps: f64) {
    for i in 0..p.len() {
        v[i] = decay * v[i] + (1.0 - decay) * g[i] * g[i];
        p[i] -= lr * g[i] / (v[i] + eps).sqrt();
    }
}

pub const PLATEAU_PATIENCE: usize = 5;
pub const PLATEAU_FACTOR: f64 = 0.1;

/// Reduces the learning rate by `factor` once the monitored loss has not
/// improved for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub factor: f64,
    pub best: Option<f64>,
    pub stale_epochs: usize,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self::new(PLATEAU_PATIENCE, PLATEAU_FACTOR)
    }
}

impl PlateauSchedule {
    pub fn new(patience: usize, factor: f64) -> Self {
        PlateauSchedule {
            patience,
            factor,
            best: None,
            stale_epochs: 0,
        }
    }

    /// Records one validation loss and returns the (possibly reduced) rate.
    pub fn update(&mut self, lr: f64, loss: f64) -> f64 {
        match self.best {
            Some(best) if !(loss < best) => {
                self.stale_epochs += 1;
                if self.stale_epochs >= self.patience {
                    self.stale_epochs = 0;
                    return lr * self.factor;
                }
                lr
            }
            _ => {
                self.best = Some(loss);
                self.stale_epochs = 0;
                lr
            }
        }
    }
}
