//! First-order optimizers over flat parameter vectors, selectable by name.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::registry::Registry;

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    fn step(&mut self, params: &mut [f64], grads: &[f64]);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimArgs {
    pub lr: f64,
    pub momentum: f64,
    pub n_params: usize,
}

pub struct SgdMomentum {
    lr: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, n: usize) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![0.0; n],
        }
    }
}

impl Optimizer for SgdMomentum {
    fn name(&self) -> &'static str {
        "sgd-momentum"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

pub fn registry() -> Registry<OptimArgs, dyn Optimizer> {
    let mut r: Registry<OptimArgs, dyn Optimizer> = Registry::new("optimizer");
    r.register("sgd-momentum", |a| Ok(Box::new(SgdMomentum::new(a.lr, a.momentum, a.n_params))))
        .register("sgd", |a| Ok(Box::new(SgdMomentum::new(a.lr, 0.0, a.n_params))))
        .register("adam", |a| Ok(Box::new(Adam::new(a.lr, a.n_params))));
    r
}

pub fn build(name: &str, args: &OptimArgs) -> Result<Box<dyn Optimizer>> {
    registry().build(name, args)
}

/// Rescales `grads` in place so their L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let n = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimize(name: &str, lr: f64) -> f64 {
        // f(x) = sum (x_i - i)^2
        let mut opt = build(name, &OptimArgs { lr, momentum: 0.9, n_params: 3 }).unwrap();
        let mut x = vec![5.0, -3.0, 0.5];
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 * (v - i as f64)).collect();
            opt.step(&mut x, &g);
        }
        x.iter().enumerate().map(|(i, v)| (v - i as f64).powi(2)).sum()
    }

    #[test]
    fn optimizers_converge_on_quadratic() {
        assert!(minimize("sgd-momentum", 0.01) < 1e-8);
        assert!(minimize("sgd", 0.05) < 1e-8);
        assert!(minimize("adam", 0.05) < 1e-6);
    }

    #[test]
    fn unknown_optimizer_named_in_error() {
        let err = build("lbfgs", &OptimArgs { lr: 0.1, momentum: 0.0, n_params: 1 })
            .err()
            .unwrap();
        assert!(err.to_string().contains("lbfgs"));
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 5.0);
        assert_eq!(g, vec![3.0, 4.0]);
        clip_grad_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
