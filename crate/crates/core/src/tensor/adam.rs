use std::f64::consts::PI;

use super::ParamStore;
use crate::error::{Error, Result};

/// Cosine annealing from `base_lr` at epoch 0 to `min_lr` at `total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_epochs: usize,
}

impl CosineSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        if self.total_epochs == 0 {
            return self.base_lr;
        }
        let t = epoch.min(self.total_epochs) as f64 / self.total_epochs as f64;
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub schedule: CosineSchedule,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, schedule: CosineSchedule) -> Self {
        let first: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { step: 0, betas: (0.9, 0.999), eps: 1e-8, schedule, second: first.clone(), first }
    }

    pub fn moments(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.first[i], &self.second[i])
    }
}

/// One Adam update with the scheduled learning rate for `epoch`; clears gradients
/// back to zero afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, epoch: usize) -> Result<()> {
    if state.first.len() != store.len() {
        return Err(Error::Shape {
            op: "adam_step",
            detail: format!("state tracks {} params, store has {}", state.first.len(), store.len()),
        });
    }
    if let Some(p) = store.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGrad(p.name.clone()));
    }
    state.step += 1;
    let lr = state.schedule.lr(epoch);
    let (b1, b2) = state.betas;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for (i, p) in store.iter_mut().enumerate() {
        let grad = p.grad.as_mut().expect("checked above");
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (j, (w, g)) in p.value.data_mut().iter_mut().zip(grad.data_mut()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * *g;
            v[j] = b2 * v[j] + (1.0 - b2) * *g * *g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= lr * mhat / (vhat.sqrt() + state.eps);
            *g = 0.0;
        }
    }
    Ok(())
}
