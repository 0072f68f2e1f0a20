use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments, one pair per parameter tensor (matched by position).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every tensor from its gradient buffer.
    /// Tensors without a gradient buffer are treated as having zero gradient.
    /// Gradients are cleared afterwards. A non-finite gradient aborts the step
    /// before anything is modified.
    pub fn step(&mut self, tensors: &mut [Tensor]) -> Result<()> {
        for (i, t) in tensors.iter().enumerate() {
            if let Some(g) = t.grad() {
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient in tensor {i} at element {pos}"
                    )));
                }
            }
        }
        if self.first.len() != tensors.len() {
            self.first = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in tensors.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if m.len() != t.len() {
                return Err(Error::dim("adam", format!("moment length {} != {}", m.len(), t.len())));
            }
            let grad = t.grad().map(<[f64]>::to_vec);
            let values = t.values_mut();
            for j in 0..values.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                values[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            t.clear_grad();
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut ModelParams, state: &mut AdamState) -> Result<()> {
    state.step(params.tensors_mut())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64, g: f64) -> Tensor {
        let mut t = Tensor::new(vec![1], vec![x]).unwrap();
        t.grad_mut()[0] = g;
        t
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ts = vec![scalar(1.0, 1.0)];
        let mut adam = AdamState::new(AdamConfig::new(0.1));
        adam.step(&mut ts).unwrap();
        assert!((ts[0].values()[0] - 0.9).abs() < 1e-6);
        assert!(ts[0].grad().is_none());
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut ts = vec![scalar(0.3, 0.0), Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()];
        let mut adam = AdamState::new(AdamConfig::new(0.1));
        adam.step(&mut ts).unwrap();
        assert_eq!(ts[0].values(), &[0.3]);
        assert_eq!(ts[1].values(), &[1.0, -1.0]);
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut ts = vec![scalar(1.0, 0.5), scalar(2.0, f64::NAN)];
        let mut adam = AdamState::new(AdamConfig::new(0.1));
        assert!(matches!(adam.step(&mut ts), Err(Error::Numeric(_))));
        assert_eq!(ts[0].values(), &[1.0]);
        assert_eq!(adam.steps(), 0);
    }

    /// Hand-stepped Adam on f(x) = x², written out independently of `step`.
    fn oracle_trajectory(x0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t as i32))) / ((v / (1.0 - b2.powi(t as i32))).sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn descends_quadratic_like_oracle() {
        let expected = oracle_trajectory(1.0, 0.05, 10);
        let mut ts = vec![Tensor::new(vec![1], vec![1.0]).unwrap()];
        let mut adam = AdamState::new(AdamConfig::new(0.05));
        let mut prev = 1.0f64;
        for want in expected {
            let x = ts[0].values()[0];
            ts[0].grad_mut()[0] = 2.0 * x;
            adam.step(&mut ts).unwrap();
            let x = ts[0].values()[0];
            assert!((x - want).abs() < 1e-14);
            assert!(x.abs() < prev.abs());
            prev = x;
        }
    }

    #[test]
    fn deterministic_update() {
        let run = || {
            let mut ts = vec![scalar(0.7, -0.2), scalar(-1.0, 3.0)];
            let mut adam = AdamState::new(AdamConfig::new(0.01));
            adam.step(&mut ts).unwrap();
            ts.iter().map(|t| t.values()[0].to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
