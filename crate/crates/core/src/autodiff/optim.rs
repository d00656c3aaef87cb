//! Adam with L2 weight decay and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::tensor::Tensor;

/// How weight decay enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightDecayMode {
    /// `grad += wd · param` before the moment updates (classic Adam + L2).
    #[default]
    Coupled,
    /// `param -= lr · wd · param` applied outside the adaptive step (AdamW).
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: WeightDecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
            decay_mode: WeightDecayMode::Coupled,
        }
    }
}

/// Per-parameter moment estimates and the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }

    /// Applies one bias-corrected Adam update to every parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.numel() != self.m[i].len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(TensorError::Invalid {
                op: "adam_step",
                msg: format!("learning rate must be positive, got {lr}"),
            });
        }
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            decay_mode,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = match decay_mode {
                    WeightDecayMode::Coupled => gj + weight_decay * *w,
                    WeightDecayMode::Decoupled => gj,
                };
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                if decay_mode == WeightDecayMode::Decoupled {
                    *w -= lr * weight_decay * *w;
                }
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `base_lr · decay_factor^⌊epoch / decay_period⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_period_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            decay_factor: 0.9,
            decay_period_epochs: 10,
        }
    }
}

impl LrSchedule {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let period = self.decay_period_epochs.max(1);
        self.base_lr * self.decay_factor.powi((epoch / period) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamConfig {
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_grad_without_decay_leaves_param() {
        let mut p = vec![Tensor::from_vec(vec![1.5, -2.0])];
        let g = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(no_decay(), &p);
        st.step(&mut p, &g, 1e-3).unwrap();
        assert_eq!(p[0].data(), &[1.5, -2.0]);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // t=1: m̂ = g, v̂ = g², update = lr·g/(|g|+eps) ≈ lr.
        let mut p = vec![Tensor::from_vec(vec![1.0])];
        let g = vec![Tensor::from_vec(vec![0.5])];
        let mut st = AdamState::new(no_decay(), &p);
        st.step(&mut p, &g, 1e-4).unwrap();
        let expected = 1.0 - 1e-4 * 0.5 / (0.5 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert!((p[0].data()[0] - (1.0 - 1e-4)).abs() < 1e-10);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = vec![Tensor::from_vec(vec![1.0])];
        let mut st = AdamState::new(no_decay(), &p);
        for _ in 0..100 {
            let x = p[0].data()[0];
            let g = vec![Tensor::from_vec(vec![2.0 * x])];
            st.step(&mut p, &g, 0.1).unwrap();
        }
        assert!(p[0].data()[0].abs() < 0.1, "x = {}", p[0].data()[0]);
    }

    #[test]
    fn coupled_decay_enters_gradient() {
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut p = vec![Tensor::from_vec(vec![2.0])];
        let g = vec![Tensor::zeros(&[1])];
        let mut st = AdamState::new(cfg, &p);
        st.step(&mut p, &g, 1e-2).unwrap();
        // effective grad 0.2 > 0 so the step is ≈ −lr.
        assert!((p[0].data()[0] - (2.0 - 1e-2)).abs() < 1e-8);
        assert!((st.first_moment(0)[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_param() {
        let cfg = AdamConfig {
            weight_decay: 0.1,
            decay_mode: WeightDecayMode::Decoupled,
            ..AdamConfig::default()
        };
        let mut p = vec![Tensor::from_vec(vec![2.0])];
        let g = vec![Tensor::zeros(&[1])];
        let mut st = AdamState::new(cfg, &p);
        st.step(&mut p, &g, 1e-2).unwrap();
        assert!((p[0].data()[0] - (2.0 - 1e-2 * 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::from_vec(vec![1.0, 2.0])];
        let mut st = AdamState::new(no_decay(), &p);
        let g = vec![Tensor::zeros(&[3])];
        assert!(matches!(
            st.step(&mut p, &g, 1e-3),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let mut p = vec![Tensor::from_vec(vec![0.3, -0.7, 1.1])];
            let mut st = AdamState::new(AdamConfig::default(), &p);
            for k in 0..10 {
                let g: Vec<f64> = p[0].data().iter().map(|x| (x * k as f64).sin()).collect();
                st.step(&mut p, &[Tensor::from_vec(g)], 1e-3).unwrap();
            }
            p[0].data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at_epoch(0), 1e-4);
        assert_eq!(s.lr_at_epoch(9), 1e-4);
        assert!((s.lr_at_epoch(10) - 9e-5).abs() < 1e-18);
        assert!((s.lr_at_epoch(20) - 8.1e-5).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for e in 0..100 {
            let lr = s.lr_at_epoch(e);
            assert!(lr > 0.0 && lr <= prev);
            prev = lr;
        }
    }
}
