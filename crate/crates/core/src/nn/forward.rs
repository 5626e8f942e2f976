use ndarray::{Array1, Array2, Axis, Zip};

use super::arch::{Activation, ArchitectureSpec};
use super::checkpoint::{BnMomentum, WeightCheckpoint, BN_EPS};
use super::ops::{gelu, gelu_grad};
use crate::bn_recalib::{column_moments, RunningStats};
use crate::{Error, Result};

/// Forward-pass mode for batch-norm layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics and fold them into running statistics.
    Train,
    /// Normalize with running statistics; no state changes.
    Eval,
}

/// 64-bit working copy of the MLP parameters.
pub(crate) struct MlpParams {
    pub dense: Vec<(Array2<f64>, Array1<f64>)>,
    pub norms: Vec<Option<(Array1<f64>, Array1<f64>)>>,
}

impl MlpParams {
    pub fn from_checkpoint(c: &WeightCheckpoint) -> Self {
        Self {
            dense: c
                .dense
                .iter()
                .map(|d| (d.weight.mapv(f64::from), d.bias.mapv(f64::from)))
                .collect(),
            norms: c
                .norms
                .iter()
                .map(|n| n.as_ref().map(|bn| (bn.gamma.mapv(f64::from), bn.beta.mapv(f64::from))))
                .collect(),
        }
    }

    /// Reads the MLP part of a flat vector laid out as
    /// [`WeightCheckpoint::flatten`].
    pub fn from_flat(arch: &ArchitectureSpec, flat: &[f32]) -> Self {
        let wide: Vec<f64> = flat.iter().map(|&v| f64::from(v)).collect();
        Self::from_flat64(arch, &wide)
    }

    pub fn from_flat64(arch: &ArchitectureSpec, flat: &[f64]) -> Self {
        let dims = arch.layer_dims();
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = flat[pos..pos + n].to_vec();
            pos += n;
            s
        };
        let mut dense = Vec::with_capacity(dims.len() - 1);
        let mut norms = Vec::with_capacity(dims.len() - 2);
        for l in 0..dims.len() - 1 {
            let (i, o) = (dims[l], dims[l + 1]);
            let w = Array2::from_shape_vec((o, i), take(o * i)).unwrap();
            let b = Array1::from(take(o));
            dense.push((w, b));
            if l < dims.len() - 2 {
                norms.push(if arch.bn_layers()[l] {
                    let g = Array1::from(take(o));
                    let be = Array1::from(take(o));
                    Some((g, be))
                } else {
                    None
                });
            }
        }
        Self { dense, norms }
    }
}

pub(crate) struct BnTrace {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) struct LayerTrace {
    /// Input to the affine layer.
    pub input: Array2<f64>,
    /// Input to the activation (after BN when present).
    pub act_in: Array2<f64>,
    pub bn: Option<BnTrace>,
}

pub(crate) struct Trace {
    pub hidden: Vec<LayerTrace>,
    pub last_input: Array2<f64>,
}

pub(crate) fn activate(act: Activation, m: &Array2<f64>) -> Array2<f64> {
    match act {
        Activation::Relu => m.mapv(|v| v.max(0.0)),
        Activation::Gelu => m.mapv(gelu),
        Activation::Identity => m.clone(),
    }
}

fn activation_grad(act: Activation, pre: &Array2<f64>, upstream: &mut Array2<f64>) {
    match act {
        Activation::Relu => Zip::from(upstream).and(pre).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        }),
        Activation::Gelu => Zip::from(upstream).and(pre).for_each(|g, &p| *g *= gelu_grad(p)),
        Activation::Identity => {}
    }
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

/// Where BN layers take their normalization statistics from.
pub(crate) enum NormStats<'a> {
    Running(Vec<Option<&'a RunningStats>>),
    Batch,
}

/// MLP forward pass, optionally recording what backpropagation needs.
pub(crate) fn forward_pass(
    arch: &ArchitectureSpec,
    params: &MlpParams,
    stats: &NormStats<'_>,
    x: &Array2<f64>,
    keep_trace: bool,
) -> (Array2<f64>, Trace) {
    let mut a = x.clone();
    let mut hidden = Vec::new();
    let n_dense = params.dense.len();
    for (l, (w, b)) in params.dense.iter().enumerate() {
        let z = affine(&a, w, b);
        if l == n_dense - 1 {
            return (
                z,
                Trace {
                    hidden,
                    last_input: a,
                },
            );
        }
        let (act_in, bn) = match &params.norms[l] {
            None => (z, None),
            Some((gamma, beta)) => {
                let (mean, var) = match stats {
                    NormStats::Batch => column_moments(&z),
                    NormStats::Running(running) => {
                        let s = running[l].expect("BN layer without running statistics");
                        (s.mean.clone(), s.var.clone())
                    }
                };
                let inv_std = Array1::from_iter(var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()));
                let mean_arr = Array1::from(mean.clone());
                let xhat = (&z - &mean_arr) * &inv_std;
                let out = &xhat * gamma + beta;
                let xhat = if keep_trace { xhat } else { Array2::zeros((0, 0)) };
                (out, Some(BnTrace { xhat, inv_std, mean, var }))
            }
        };
        let next = activate(arch.activation(), &act_in);
        let input = std::mem::replace(&mut a, next);
        let empty = || Array2::zeros((0, 0));
        hidden.push(if keep_trace {
            LayerTrace { input, act_in, bn }
        } else {
            // Running-stat updates still need the batch moments.
            LayerTrace { input: empty(), act_in: empty(), bn }
        });
    }
    unreachable!("architecture has at least one affine layer")
}

/// Gradient of a scalar loss with respect to the flat parameter vector,
/// given `dlogits = dL/dlogits`. Attention parameters (if any) receive zeros.
pub(crate) fn backward(
    arch: &ArchitectureSpec,
    params: &MlpParams,
    trace: &Trace,
    dlogits: &Array2<f64>,
) -> Vec<f64> {
    let n_dense = params.dense.len();
    let mut dense_grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n_dense);
    let mut norm_grads: Vec<Option<(Array1<f64>, Array1<f64>)>> = vec![None; n_dense - 1];

    let mut delta = dlogits.clone();
    for l in (0..n_dense).rev() {
        let input = if l == n_dense - 1 {
            &trace.last_input
        } else {
            &trace.hidden[l].input
        };
        let (w, _) = &params.dense[l];
        let gw = delta.t().dot(input);
        let gb = delta.sum_axis(Axis(0));
        dense_grads.push((gw, gb));
        if l == 0 {
            break;
        }
        // Gradient flowing into hidden layer l-1's output.
        let mut d = delta.dot(w);
        let h = &trace.hidden[l - 1];
        activation_grad(arch.activation(), &h.act_in, &mut d);
        if let (Some((gamma, _)), Some(bn)) = (&params.norms[l - 1], &h.bn) {
            let dgamma = (&d * &bn.xhat).sum_axis(Axis(0));
            let dbeta = d.sum_axis(Axis(0));
            let dxhat = &d * gamma;
            let n = d.nrows() as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &bn.xhat).sum_axis(Axis(0));
            d = (&dxhat * n - &sum_dxhat - &bn.xhat * &sum_dxhat_xhat) * &(&bn.inv_std / n);
            norm_grads[l - 1] = Some((dgamma, dbeta));
        }
        delta = d;
    }
    dense_grads.reverse();

    let mut flat = Vec::with_capacity(arch.param_count());
    for (l, (gw, gb)) in dense_grads.iter().enumerate() {
        flat.extend(gw.iter());
        flat.extend(gb.iter());
        if let Some(Some((gg, gbeta))) = norm_grads.get(l) {
            flat.extend(gg.iter());
            flat.extend(gbeta.iter());
        } else if l < n_dense - 1 && arch.bn_layers()[l] {
            // BN evaluated with running stats has no batch trace; not used in training.
            flat.extend(std::iter::repeat_n(0.0, 2 * arch.layer_dims()[l + 1]));
        }
    }
    flat.resize(arch.param_count(), 0.0);
    flat
}

impl WeightCheckpoint {
    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.arch().input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.arch().input_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn running_stats(&self) -> NormStats<'_> {
        NormStats::Running(self.norms.iter().map(|n| n.as_ref().map(|bn| &bn.stats)).collect())
    }

    /// Eval-mode logits (`n x d_out`).
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let params = MlpParams::from_checkpoint(self);
        Ok(forward_pass(self.arch(), &params, &self.running_stats(), x, false).0)
    }

    /// Forward pass in either mode; train mode updates running statistics
    /// according to [`bn_momentum`](Self::bn_momentum).
    pub fn forward_with_mode(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Eval => self.forward(x),
            Mode::Train => {
                self.check_input(x)?;
                let params = MlpParams::from_checkpoint(self);
                let (logits, trace) = forward_pass(self.arch(), &params, &NormStats::Batch, x, false);
                self.fold_batch_stats(&trace, x.nrows());
                Ok(logits)
            }
        }
    }

    pub(crate) fn fold_batch_stats(&mut self, trace: &Trace, n: usize) {
        let momentum = self.bn_momentum;
        for (norm, layer) in self.norms.iter_mut().zip(&trace.hidden) {
            if let (Some(bn), Some(t)) = (norm, &layer.bn) {
                match momentum {
                    BnMomentum::Ema(alpha) => bn.stats.ema_update(&t.mean, &t.var, n as u64, alpha),
                    BnMomentum::Cumulative => bn.stats.merge_batch(&t.mean, &t.var, n as u64),
                }
            }
        }
    }

    /// Eval-mode output of affine layer `hidden` (the input to its BN), with
    /// earlier layers normalized by their running statistics.
    pub fn hidden_pre_activations(&self, x: &Array2<f64>, hidden: usize) -> Result<Array2<f64>> {
        self.check_input(x)?;
        if hidden >= self.arch().hidden_dims().len() {
            return Err(Error::Argument(format!("no hidden layer {hidden}")));
        }
        let params = MlpParams::from_checkpoint(self);
        let mut a = x.clone();
        for l in 0..hidden {
            let (w, b) = &params.dense[l];
            let mut z = affine(&a, w, b);
            if let (Some((g, be)), Some(bn)) = (&params.norms[l], &self.norms[l]) {
                let mean = Array1::from(bn.stats.mean.clone());
                let inv = Array1::from_iter(bn.stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()));
                z = (&z - &mean) * &inv * g + be;
            }
            a = activate(self.arch().activation(), &z);
        }
        let (w, b) = &params.dense[hidden];
        Ok(affine(&a, w, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::{init_weights, InitScheme};
    use ndarray::arr2;

    #[test]
    fn identity_network_passes_input_through() {
        let arch = ArchitectureSpec::mlp(&[3, 3, 3], Activation::Identity).unwrap();
        let mut c = WeightCheckpoint::zeros(&arch);
        for d in &mut c.dense {
            d.weight = Array2::eye(3);
        }
        let x = arr2(&[[1.0, -2.0, 3.5], [0.25, 0.0, -1.0]]);
        assert_eq!(c.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_computed_two_two_two_relu() {
        let arch = ArchitectureSpec::mlp(&[2, 2, 2], Activation::Relu).unwrap();
        let mut c = WeightCheckpoint::zeros(&arch);
        c.dense[0].weight = arr2(&[[1.0, -1.0], [2.0, 1.0]]);
        c.dense[0].bias = ndarray::arr1(&[0.5, -1.0]);
        c.dense[1].weight = arr2(&[[1.0, 2.0], [-1.0, 0.5]]);
        c.dense[1].bias = ndarray::arr1(&[0.0, 1.0]);
        // x = (1, 3): h_pre = (1-3+0.5, 2+3-1) = (-1.5, 4) -> relu (0, 4)
        // logits = (0 + 8 + 0, 0 + 2 + 1) = (8, 3)
        let out = c.forward(&arr2(&[[1.0, 3.0]])).unwrap();
        assert_eq!(out, arr2(&[[8.0, 3.0]]));
    }

    #[test]
    fn eval_mode_is_pure() {
        let arch = ArchitectureSpec::bn_mlp(&[4, 8, 3], Activation::Relu).unwrap();
        let c = init_weights(&arch, InitScheme::Kaiming, 5);
        let x = Array2::from_shape_fn((6, 4), |(i, j)| (i * 4 + j) as f64 * 0.1 - 1.0);
        let a = c.forward(&x).unwrap();
        let b = c.forward(&x).unwrap();
        assert_eq!(a, b);
        let mut m = c.clone();
        m.forward_with_mode(&x, Mode::Eval).unwrap();
        assert_eq!(m, c);
    }

    #[test]
    fn train_mode_updates_running_stats_by_ema() {
        let arch = ArchitectureSpec::new(vec![1, 1, 1], Activation::Identity, vec![true], None).unwrap();
        let mut c = WeightCheckpoint::zeros(&arch);
        c.dense[0].weight = arr2(&[[1.0]]);
        let x = arr2(&[[0.0], [2.0], [4.0], [6.0]]);
        c.forward_with_mode(&x, Mode::Train).unwrap();
        let s = &c.norms[0].as_ref().unwrap().stats;
        // batch mean 3, population variance 5, momentum 0.1
        assert!((s.mean[0] - 0.3).abs() < 1e-12);
        assert!((s.var[0] - (0.9 + 0.5)).abs() < 1e-12);
        assert_eq!(s.count, 4);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let arch = ArchitectureSpec::mlp(&[4, 3], Activation::Relu).unwrap();
        let c = WeightCheckpoint::zeros(&arch);
        assert!(matches!(c.forward(&Array2::zeros((2, 5))), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_matches_finite_differences_with_bn() {
        use crate::nn::train::cross_entropy;
        let arch = ArchitectureSpec::new(vec![3, 5, 4, 2], Activation::Gelu, vec![true, false], None).unwrap();
        let c = init_weights(&arch, InitScheme::Normal(0.5), 9);
        let x = Array2::from_shape_fn((7, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let labels = vec![0, 1, 1, 0, 1, 0, 0];
        let flat = c.flatten();
        let loss_at = |v: &[f64]| {
            let p = MlpParams::from_flat64(&arch, v);
            let (logits, _) = forward_pass(&arch, &p, &NormStats::Batch, &x, false);
            cross_entropy(&logits, &labels).0
        };
        let v0: Vec<f64> = flat.iter().map(|&v| v as f64).collect();
        let p = MlpParams::from_flat64(&arch, &v0);
        let (logits, trace) = forward_pass(&arch, &p, &NormStats::Batch, &x, true);
        let (_, dlogits) = cross_entropy(&logits, &labels);
        let grad = backward(&arch, &p, &trace, &dlogits);
        for i in 0..v0.len() {
            let h = 1e-5;
            let mut plus = v0.clone();
            plus[i] += h;
            let mut minus = v0.clone();
            minus[i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", grad[i]);
        }
    }
}
