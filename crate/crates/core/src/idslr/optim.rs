//! Adam and the deterministic minibatch plumbing shared by all trainers.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrisim::{seeded_rng, streams};

pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_BATCH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Sample order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), streams::SHUFFLE);
    idx.shuffle(&mut rng);
    idx
}

/// Mean loss and mean gradient over `batch`. Samples may be evaluated in
/// parallel; the reduction runs in batch order, so results are bitwise
/// independent of the thread count.
pub fn batch_gradient<F>(batch: &[usize], n_params: usize, f: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(usize) -> Result<(f64, Vec<f64>)> + Sync,
{
    let parts: Vec<(f64, Vec<f64>)> = batch.par_iter().map(|&i| f(i)).collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for (l, g) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

/// Runs `epochs` epochs of minibatch Adam starting at epoch index
/// `first_epoch`; returns the mean training loss of every epoch.
pub fn run_epochs<F>(
    params: &mut Vec<f64>,
    adam: &mut Adam,
    n_samples: usize,
    batch_size: usize,
    seed: u64,
    first_epoch: usize,
    epochs: usize,
    sample_grad: F,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64], usize) -> Result<(f64, Vec<f64>)> + Sync,
{
    if n_samples == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut losses = Vec::with_capacity(epochs);
    for e in first_epoch..first_epoch + epochs {
        let order = epoch_order(n_samples, seed, e);
        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            let snapshot = params.clone();
            let (loss, grad) = batch_gradient(batch, params.len(), |i| sample_grad(&snapshot, i))?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite loss or gradient in epoch {e}")));
            }
            total += loss * batch.len() as f64;
            adam.update(params, &grad)?;
        }
        losses.push(total / n_samples as f64);
    }
    Ok(losses)
}
