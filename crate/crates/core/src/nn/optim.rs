//! First-order optimizers over flat parameter vectors.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adam with L2 weight decay folded into the gradient.
    Adam,
    /// Adam with decoupled weight decay.
    AdamW,
    /// Plain stochastic gradient descent.
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Storage type of the parameters being optimized. Updates are always
/// computed in 64-bit.
pub trait ParamScalar: Copy {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl ParamScalar for f32 {
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl ParamScalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize, weight_decay: f64, betas: (f64, f64)) -> Self {
        let moments = if kind == OptimizerKind::Sgd { 0 } else { n_params };
        Self {
            kind,
            weight_decay,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    /// One update with learning rate `lr`.
    pub fn step<P: ParamScalar>(&mut self, params: &mut [P], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    let x = p.to_f64();
                    *p = P::from_f64(x - lr * (g + wd * x));
                }
            }
            OptimizerKind::Adam | OptimizerKind::AdamW => {
                let decoupled = self.kind == OptimizerKind::AdamW;
                let bc1 = 1.0 - self.beta1.powi(self.t as i32);
                let bc2 = 1.0 - self.beta2.powi(self.t as i32);
                for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
                    let mut x = p.to_f64();
                    let g = if decoupled {
                        x -= lr * wd * x;
                        g
                    } else {
                        g + wd * x
                    };
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    x -= lr * mhat / (vhat.sqrt() + self.eps);
                    *p = P::from_f64(x);
                }
            }
        }
    }
}

/// Cosine annealing from `base` at step 0 to `floor` at step `total`.
pub fn cosine_lr(base: f64, floor: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step as f64 / total as f64).min(1.0);
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 2, 0.0, (0.9, 0.999));
        let mut p = [1.0f64, -1.0];
        opt.step(&mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::AdamW, 1, 0.1, (0.9, 0.95));
        let mut p = [2.0f32];
        opt.step(&mut p, &[0.0], 0.5);
        assert!((p[0] - 1.9).abs() < 1e-6);
    }

    #[test]
    fn sgd_and_schedule() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1, 0.0, (0.0, 0.0));
        let mut p = [1.0f64];
        opt.step(&mut p, &[2.0], 0.25);
        assert_eq!(p[0], 0.5);
        assert_eq!(cosine_lr(1.0, 0.0, 0, 10), 1.0);
        assert!((cosine_lr(1.0, 0.1, 5, 10) - 0.55).abs() < 1e-12);
        assert!((cosine_lr(1.0, 0.1, 10, 10) - 0.1).abs() < 1e-12);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
