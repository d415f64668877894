use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `p ← p − lr·weight_decay·p` before the Adam delta.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len(), self.first.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((w, &gk), mk), vk) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *w -= lr * weight_decay * *w;
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let mhat = *mk / bc1;
                let vhat = *vk / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: wd,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut params = vec![Tensor::vector(vec![1.5, -2.0])];
        let before = params.clone();
        let mut st = AdamState::new(cfg(0.1, 0.0), &params);
        st.step(&mut params, &[Tensor::vector(vec![0.0, 0.0])]).unwrap();
        assert_eq!(params, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_on_half_square_moves_at_most_lr() {
        // f(w) = w²/2, f'(w) = w. First bias-corrected step is lr·g/(|g|+ε).
        let mut params = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(cfg(0.1, 0.0), &params);
        st.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        let w = params[0].item();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-15);
        assert!((1.0 - w).abs() <= 0.1 && w < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = Σ a_k (w_k − c_k)² / 2, argmin at c.
        let a = [1.0, 4.0, 0.5];
        let c = [0.3, -1.2, 2.0];
        let mut params = vec![Tensor::vector(vec![0.0; 3])];
        let mut st = AdamState::new(cfg(0.05, 0.0), &params);
        for _ in 0..200 {
            let g: Vec<f64> = (0..3).map(|k| a[k] * (params[0].data()[k] - c[k])).collect();
            st.step(&mut params, &[Tensor::vector(g)]).unwrap();
        }
        for k in 0..3 {
            assert!((params[0].data()[k] - c[k]).abs() < 1e-3, "{:?}", params[0]);
        }
        assert_eq!(st.step_count(), 200);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::vector(vec![0.0; 3])];
        let mut st = AdamState::new(cfg(0.1, 0.0), &params);
        assert!(st.step(&mut params, &[Tensor::vector(vec![0.0; 2])]).is_err());
    }

    #[test]
    fn decoupled_decay_shrinks_before_adam_delta() {
        let mut params = vec![Tensor::scalar(2.0)];
        let mut st = AdamState::new(cfg(0.1, 0.5), &params);
        st.step(&mut params, &[Tensor::scalar(0.0)]).unwrap();
        assert!((params[0].item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }
}
