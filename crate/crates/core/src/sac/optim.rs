use serde::{Deserialize, Serialize};

use super::nn::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) or plain SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Params,
    pub v: Params,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, like: &Params) -> Self {
        Self { kind, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: like.zeros_like(), v: like.zeros_like() }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad.iter()) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                let step = self.lr * c2.sqrt() / c1;
                let eps_hat = self.eps * c2.sqrt();
                for (((p, g), m), v) in params.iter_mut().zip(grad.iter()).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps_hat);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = Params(vec![array![[1.0, -2.0]]]);
        let g = Params(vec![array![[0.5, -3.0]]]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &p);
        opt.step(&mut p, &g);
        assert!((p.0[0][[0, 0]] - 0.99).abs() < 1e-9);
        assert!((p.0[0][[0, 1]] + 1.99).abs() < 1e-9);
    }

    #[test]
    fn sgd_minimizes_quadratic() {
        let mut p = Params(vec![array![[4.0]]]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &p);
        for _ in 0..200 {
            let g = Params(vec![array![[2.0 * p.0[0][[0, 0]]]]]);
            opt.step(&mut p, &g);
        }
        assert!(p.0[0][[0, 0]].abs() < 1e-9);
    }
}
