use serde::{Deserialize, Serialize};

use super::Layer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-5, max_grad_norm: Some(0.2) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

pub fn round_to_f32(data: &mut [f64]) {
    for x in data {
        *x = *x as f32 as f64;
    }
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Clips, then applies one Adam step. Parameters are kept f32-representable.
    pub fn step(&mut self, params: &mut [f64], grad: &mut [f64], layers: &[Layer]) -> Result<f64> {
        for layer in layers {
            if grad[layer.range()].iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(layer.name.clone()));
            }
        }
        let norm = match self.config.max_grad_norm {
            Some(max) => clip_grad_norm(grad, max),
            None => grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        };
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
        }
        round_to_f32(params);
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_gradient_is_clipped_to_point_two() {
        let mut g = vec![0.6, 0.8];
        let pre = clip_grad_norm(&mut g, 0.2);
        assert!((pre - 1.0).abs() < 1e-12);
        let post = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((post - 0.2).abs() < 1e-12);
        assert!((g[0] / g[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn small_gradient_is_untouched() {
        let mut g = vec![0.01, 0.02];
        clip_grad_norm(&mut g, 0.2);
        assert_eq!(g, vec![0.01, 0.02]);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let layers = vec![
            Layer { name: "a".into(), offset: 0, rows: 1, cols: 1 },
            Layer { name: "b".into(), offset: 1, rows: 1, cols: 1 },
        ];
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        let mut g = vec![0.0, f64::NAN];
        match adam.step(&mut p, &mut g, &layers) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let layers = vec![Layer { name: "w".into(), offset: 0, rows: 1, cols: 1 }];
        let mut adam = Adam::new(1, AdamConfig { max_grad_norm: None, ..AdamConfig::default() });
        let mut p = vec![1.0];
        let mut g = vec![0.5];
        adam.step(&mut p, &mut g, &layers).unwrap();
        // m̂ = g, v̂ = g², step = lr * g / (|g| + eps)
        let expected = 1.0 - 3e-4 * 0.5 / (0.5 + 1e-5);
        assert!((p[0] - expected as f32 as f64).abs() < 1e-12);
    }
}
