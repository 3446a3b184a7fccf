use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64` regardless of the
/// parameter type.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step<T: Real>(&mut self, params: Vec<&mut Param<T>>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i].f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let upd = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                p.value[i] -= T::lit(upd);
                p.grad[i] = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::<f64>::new("p".into(), vec![2], vec![1.0, -1.0]);
        p.grad = vec![0.3, -5.0];
        let mut opt = Adam::new(AdamConfig::with_lr(0.1));
        opt.step(vec![&mut p]);
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] + 0.9).abs() < 1e-6);
        assert_eq!(p.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::<f64>::new("p".into(), vec![1], vec![3.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.05));
        for _ in 0..2000 {
            p.grad[0] = 2.0 * (p.value[0] - 1.0);
            opt.step(vec![&mut p]);
        }
        assert!((p.value[0] - 1.0).abs() < 1e-3);
    }
}
