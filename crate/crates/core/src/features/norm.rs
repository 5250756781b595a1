//! Batch normalization over `[batch][group][inner]` layouts: one statistic
//! per group, pooled over batch and inner positions. Used per mel bin on the
//! input spectrogram and per channel inside the network.
//!
//! Normalization uses the biased (population) batch variance, and the same
//! biased variance feeds the running average.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub batch: usize,
    pub groups: usize,
    pub inner: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.batch * self.groups * self.inner
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn count(&self) -> f64 {
        (self.batch * self.inner) as f64
    }

    fn slice(&self, b: usize, g: usize) -> core::ops::Range<usize> {
        let start = (b * self.groups + g) * self.inner;
        start..start + self.inner
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(groups: usize) -> Self {
        RunningStats { mean: vec![0.0; groups], var: vec![1.0; groups] }
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64], momentum: f64) {
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

/// What backward needs from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub layout: Layout,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn forward_train(x: &[f64], layout: Layout, gamma: &[f64], beta: &[f64], eps: f64) -> (Vec<f64>, NormCache) {
    assert_eq!(x.len(), layout.len());
    let n = layout.count();
    let mut mean = vec![0.0; layout.groups];
    let mut var = vec![0.0; layout.groups];
    for g in 0..layout.groups {
        let mut s = 0.0;
        for b in 0..layout.batch {
            s += x[layout.slice(b, g)].iter().sum::<f64>();
        }
        let m = s / n;
        let mut ss = 0.0;
        for b in 0..layout.batch {
            ss += x[layout.slice(b, g)].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        mean[g] = m;
        var[g] = ss / n;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..layout.batch {
        for g in 0..layout.groups {
            let r = layout.slice(b, g);
            for ((xh, yv), &xv) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&x[r]) {
                *xh = (xv - mean[g]) * inv_std[g];
                *yv = gamma[g] * *xh + beta[g];
            }
        }
    }
    (y, NormCache { layout, xhat, inv_std, mean, var })
}

pub fn forward_eval(
    x: &[f64],
    layout: Layout,
    gamma: &[f64],
    beta: &[f64],
    running: &RunningStats,
    eps: f64,
) -> Vec<f64> {
    assert_eq!(x.len(), layout.len());
    let mut y = vec![0.0; x.len()];
    for g in 0..layout.groups {
        let scale = gamma[g] / (running.var[g] + eps).sqrt();
        let shift = beta[g] - running.mean[g] * scale;
        for b in 0..layout.batch {
            let r = layout.slice(b, g);
            for (yv, &xv) in y[r.clone()].iter_mut().zip(&x[r]) {
                *yv = xv * scale + shift;
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn backward(dy: &[f64], cache: &NormCache, gamma: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let layout = cache.layout;
    let n = layout.count();
    let mut dgamma = vec![0.0; layout.groups];
    let mut dbeta = vec![0.0; layout.groups];
    for b in 0..layout.batch {
        for g in 0..layout.groups {
            let r = layout.slice(b, g);
            for (&d, &xh) in dy[r.clone()].iter().zip(&cache.xhat[r]) {
                dgamma[g] += d * xh;
                dbeta[g] += d;
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for g in 0..layout.groups {
        // with dxhat = gamma * dy: sum(dxhat) = gamma*dbeta, sum(dxhat*xhat) = gamma*dgamma
        let k = gamma[g] * cache.inv_std[g] / n;
        for b in 0..layout.batch {
            let r = layout.slice(b, g);
            for ((o, &d), &xh) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&cache.xhat[r]) {
                *o = k * (n * d - dbeta[g] - xh * dgamma[g]);
            }
        }
    }
    (dx, dgamma, dbeta)
}
