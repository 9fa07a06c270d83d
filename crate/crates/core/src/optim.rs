//! First-order optimizers. All of them minimize: `step` moves against `grad`.

use serde::{Deserialize, Serialize};

pub trait Optimizer {
    fn step(&mut self, params: &mut [f64], grad: &[f64]);
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Momentum-free adaptive step: each coordinate is divided by a running RMS
/// of its own gradient (bias-corrected so early steps are not inflated).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    v: Vec<f64>,
    t: i32,
}

impl RmsProp {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            decay: 0.99,
            eps: 1e-8,
            v: vec![0.0; n],
            t: 0,
        }
    }
}

impl Optimizer for RmsProp {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.v.len());
        assert_eq!(grad.len(), self.v.len());
        self.t += 1;
        let c = 1.0 - self.decay.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.v[i] = self.decay * self.v[i] + (1.0 - self.decay) * g * g;
            params[i] -= self.lr * g / ((self.v[i] / c).sqrt() + self.eps);
        }
    }
}

/// Rescale `grad` in place so its L2 norm is at most `max_norm`. Returns the
/// norm before clipping. A non-positive `max_norm` disables clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
