//! Optimizers and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `b ← μ b + (g + λ w)`, `w ← w − η b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        Self { lr, beta1: betas.0, beta2: betas.1, eps: 1e-8, weight_decay }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd(s) => s.lr,
            Optimizer::Adam(a) => a.lr,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        match &mut self {
            Optimizer::Sgd(s) => s.lr = lr,
            Optimizer::Adam(a) => a.lr = lr,
        }
        self
    }

    /// Updates every parameter of `group` that holds a gradient, scaling the
    /// gradient by `grad_scale` first, then clears gradients of the group.
    pub fn step(&self, store: &mut ParamStore, group: Group, grad_scale: f64) -> Result<()> {
        for p in store.iter_mut().filter(|p| p.group == group) {
            let Some(mut g) = p.value.take_grad() else { continue };
            if grad_scale != 1.0 {
                g.iter_mut().for_each(|x| *x *= grad_scale);
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} ({} group)", p.name, group.name())));
            }
            let w = p.value.data_mut();
            match self {
                Optimizer::Sgd(s) => {
                    let buf = p.state.momentum.get_or_insert_with(|| vec![0.0; w.len()]);
                    let first = p.state.step == 0;
                    for ((wi, gi), bi) in w.iter_mut().zip(&g).zip(buf.iter_mut()) {
                        let d = gi + s.weight_decay * *wi;
                        *bi = if first { d } else { s.momentum * *bi + d };
                        *wi -= s.lr * *bi;
                    }
                }
                Optimizer::Adam(a) => {
                    let m = p.state.adam_m.get_or_insert_with(|| vec![0.0; w.len()]);
                    let v = p.state.adam_v.get_or_insert_with(|| vec![0.0; w.len()]);
                    let t = (p.state.step + 1) as i32;
                    let bc1 = 1.0 - a.beta1.powi(t);
                    let bc2 = 1.0 - a.beta2.powi(t);
                    for i in 0..w.len() {
                        let d = g[i] + a.weight_decay * w[i];
                        m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * d;
                        v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * d * d;
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        w[i] -= a.lr * mh / (vh.sqrt() + a.eps);
                    }
                }
            }
            p.state.step += 1;
        }
        Ok(())
    }
}

/// Cosine annealing without restarts: `lr0 (1 + cos(π e / T)) / 2`.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos()) / 2.0
}

/// Halves the learning rate once the monitored loss has failed to improve
/// for more than `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Records one epoch's loss and returns the (possibly reduced) rate.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return lr * self.factor;
        }
        lr
    }
}
