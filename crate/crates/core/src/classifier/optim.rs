//! Adam and the step-then-ramp learning-rate schedule.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, Gradients, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient.
    #[serde(default)]
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, grad_clip: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| alloc::vec![0.0; t.data.len()]).collect();
        OptimizerState { config, step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), ClassifierError> {
    let n = params.tensors.len();
    if grads.tensors.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(ClassifierError::ParamMismatch);
    }
    for ((t, g), m) in params.tensors.iter().zip(&grads.tensors).zip(&state.m) {
        if g.len() != t.data.len() || m.len() != t.data.len() {
            return Err(ClassifierError::ParamMismatch);
        }
    }
    if !grads.tensors.iter().flatten().all(|g| g.is_finite()) {
        return Err(ClassifierError::NonFiniteGradient);
    }
    let cfg = &state.config;
    let clip = match cfg.grad_clip {
        Some(max) => {
            let norm = grads.tensors.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, tensor) in params.tensors.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in tensor.data.iter_mut().enumerate() {
            let g = grads.tensors[i][j] * clip + cfg.weight_decay * *p;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Constant `base` through `hold_until`, linear to `floor` at `decay_until`,
/// then constant until `total`. Epochs count from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub floor: f64,
    pub hold_until: usize,
    pub decay_until: usize,
    pub total: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { base: 1e-4, floor: 1e-5, hold_until: 30, decay_until: 90, total: 100 }
    }
}

impl LrSchedule {
    /// Same shape stretched to `total` epochs, breakpoints at 30% and 90%.
    pub fn scaled(base: f64, floor: f64, total: usize) -> Self {
        let hold_until = ((total as f64 * 0.3).round() as usize).max(1);
        let decay_until = ((total as f64 * 0.9).round() as usize).max(hold_until);
        LrSchedule { base, floor, hold_until, decay_until, total }
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f64, ClassifierError> {
        if epoch == 0 || epoch > self.total {
            return Err(ClassifierError::EpochOutOfRange { epoch, total: self.total });
        }
        Ok(if epoch <= self.hold_until {
            self.base
        } else if epoch >= self.decay_until {
            self.floor
        } else {
            let frac = (epoch - self.hold_until) as f64 / (self.decay_until - self.hold_until) as f64;
            self.base + (self.floor - self.base) * frac
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Arch, Tensor};
    use alloc::string::ToString;
    use alloc::vec;

    fn scalar(p: f64) -> ModelParams {
        ModelParams {
            arch: Arch::tiny(2, 2, 13),
            tensors: vec![Tensor { name: "p".to_string(), shape: vec![1], data: vec![p] }],
        }
    }

    #[test]
    fn schedule_points() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at_epoch(1).unwrap(), 1e-4);
        assert_eq!(s.lr_at_epoch(30).unwrap(), 1e-4);
        assert!((s.lr_at_epoch(60).unwrap() - 5.5e-5).abs() < 1e-18);
        assert_eq!(s.lr_at_epoch(90).unwrap(), 1e-5);
        assert_eq!(s.lr_at_epoch(100).unwrap(), 1e-5);
        assert_eq!(s.lr_at_epoch(0), Err(ClassifierError::EpochOutOfRange { epoch: 0, total: 100 }));
        assert!(s.lr_at_epoch(101).is_err());
        assert_eq!(LrSchedule::scaled(1e-4, 1e-5, 100), s);
        let short = LrSchedule::scaled(1e-3, 1e-4, 10);
        assert_eq!((short.hold_until, short.decay_until), (3, 9));
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut p = scalar(1.0);
            let mut st = OptimizerState::new(&p, AdamConfig::default());
            adam_step(&mut p, &Gradients { tensors: vec![vec![g]] }, &mut st, 0.01).unwrap();
            // mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps)
            let expect = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p.tensors[0].data[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar(0.7);
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut p, &Gradients { tensors: vec![vec![0.0]] }, &mut st, 0.1).unwrap();
        }
        assert_eq!(p.tensors[0].data[0], 0.7);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = scalar(0.7);
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        let bad = Gradients { tensors: vec![vec![f64::NAN]] };
        assert_eq!(adam_step(&mut p, &bad, &mut st, 0.1), Err(ClassifierError::NonFiniteGradient));
        assert_eq!(st.step, 0);
        let wrong = Gradients { tensors: vec![vec![1.0, 2.0]] };
        assert_eq!(adam_step(&mut p, &wrong, &mut st, 0.1), Err(ClassifierError::ParamMismatch));
    }

    #[test]
    fn clipping_scales_gradient() {
        let cfg = AdamConfig { grad_clip: Some(1.0), ..AdamConfig::default() };
        let mut p = scalar(0.0);
        let mut st = OptimizerState::new(&p, cfg);
        adam_step(&mut p, &Gradients { tensors: vec![vec![50.0]] }, &mut st, 0.1).unwrap();
        assert!((st.m[0][0] - 0.1).abs() < 1e-15);
    }
}
