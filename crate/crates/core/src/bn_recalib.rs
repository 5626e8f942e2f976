//! Recalibration of batch-norm running statistics.
//!
//! Generated checkpoints carry no meaningful running statistics. They are
//! recomputed by streaming a calibration set through the network with the
//! moving average disabled and folding each batch in with the exact pooled
//! update
//!
//! ```text
//! n'  = n + n_k
//! mu' = (n mu + n_k mu_k) / n'
//! v'  = (n v + n_k v_k + (n n_k / n') (mu - mu_k)^2) / n'
//! ```
//!
//! so the result is the population mean/variance of the whole calibration
//! set regardless of how it was batched. BN layers are recalibrated one at a
//! time in forward order, each pass normalizing earlier layers with their
//! freshly recalibrated statistics; this keeps every layer's statistics
//! independent of the batch partition.

use ndarray::{s, Array2};

use crate::data::LabeledDataset;
use crate::nn::{BnMomentum, WeightCheckpoint, DEFAULT_BN_MOMENTUM};
use crate::{Error, Result};

/// Per-feature running mean and population variance with a shared count.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: u64,
}

impl RunningStats {
    /// Mean 0, variance 1, count 0.
    pub fn reset(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Pooled update with one batch of `n` samples whose per-feature mean and
    /// population variance are given.
    pub fn merge_batch(&mut self, batch_mean: &[f64], batch_var: &[f64], n: u64) {
        if n == 0 {
            return;
        }
        let prev = self.count as f64;
        let nk = n as f64;
        let total = prev + nk;
        for c in 0..self.mean.len() {
            let delta = self.mean[c] - batch_mean[c];
            let mean = (prev * self.mean[c] + nk * batch_mean[c]) / total;
            let var = (prev * self.var[c] + nk * batch_var[c] + prev * nk / total * delta * delta) / total;
            self.mean[c] = mean;
            self.var[c] = var;
        }
        self.count += n;
    }

    /// Exponential moving average step with momentum `alpha`.
    pub fn ema_update(&mut self, batch_mean: &[f64], batch_var: &[f64], n: u64, alpha: f64) {
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - alpha) * self.mean[c] + alpha * batch_mean[c];
            self.var[c] = (1.0 - alpha) * self.var[c] + alpha * batch_var[c];
        }
        self.count += n;
    }

    /// Pooled statistics of a sequence of row blocks.
    pub fn from_batches<'a>(dim: usize, batches: impl IntoIterator<Item = &'a Array2<f64>>) -> Self {
        let mut stats = Self::reset(dim);
        for b in batches {
            let (m, v) = column_moments(b);
            stats.merge_batch(&m, &v, b.nrows() as u64);
        }
        stats
    }
}

/// Per-column mean and population variance (two-pass, 64-bit).
pub fn column_moments(x: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut mean = vec![0.0; x.ncols()];
    let mut var = vec![0.0; x.ncols()];
    if x.nrows() == 0 {
        return (mean, var);
    }
    for row in x.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for row in x.rows() {
        for ((acc, m), v) in var.iter_mut().zip(&mean).zip(row) {
            let d = v - m;
            *acc += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecalibStatus {
    Recalibrated { layers: usize, samples: usize },
    /// The architecture has no BN layers; the checkpoint is returned as is.
    NoBatchNorm,
}

/// Recompute every BN layer's running statistics over `data`.
///
/// Weights, `gamma` and `beta` are untouched; the returned checkpoint has the
/// moving average re-enabled with the default momentum.
pub fn recalibrate(
    ckpt: &WeightCheckpoint,
    data: &LabeledDataset,
    batch_size: usize,
) -> Result<(WeightCheckpoint, RecalibStatus)> {
    if data.is_empty() {
        return Err(Error::Argument("calibration data is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Argument("calibration batch size must be >= 1".into()));
    }
    if !ckpt.arch().has_bn() {
        log::warn!("recalibration requested for a network without batch norm; nothing to do");
        return Ok((ckpt.clone(), RecalibStatus::NoBatchNorm));
    }
    let mut out = ckpt.clone();
    out.bn_momentum = BnMomentum::Cumulative;
    let features = data.features();
    let n = features.nrows();
    let mut layers = 0;
    for h in 0..out.norms.len() {
        let Some(dim) = out.norms[h].as_ref().map(|bn| bn.gamma.len()) else {
            continue;
        };
        let mut stats = RunningStats::reset(dim);
        for start in (0..n).step_by(batch_size) {
            let end = (start + batch_size).min(n);
            let batch = features.slice(s![start..end, ..]).to_owned();
            let z = out.hidden_pre_activations(&batch, h)?;
            let (m, v) = column_moments(&z);
            stats.merge_batch(&m, &v, (end - start) as u64);
        }
        out.norms[h].as_mut().unwrap().stats = stats;
        layers += 1;
    }
    out.bn_momentum = BnMomentum::Ema(DEFAULT_BN_MOMENTUM);
    Ok((out, RecalibStatus::Recalibrated { layers, samples: n }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledDataset, Split};
    use crate::nn::{init_weights, Activation, ArchitectureSpec, InitScheme};
    use ndarray::arr2;

    #[test]
    fn hand_case_two_batches() {
        let a = arr2(&[[0.0], [2.0]]);
        let b = arr2(&[[4.0], [6.0]]);
        let s = RunningStats::from_batches(1, [&a, &b]);
        assert_eq!(s.mean, vec![3.0]);
        assert_eq!(s.var, vec![5.0]);
        assert_eq!(s.count, 4);
    }

    #[test]
    fn single_batch_equals_its_own_moments() {
        let x = arr2(&[[1.0, -2.0], [3.0, 0.5], [-4.0, 7.0]]);
        let s = RunningStats::from_batches(2, [&x]);
        let (m, v) = column_moments(&x);
        assert_eq!((s.mean, s.var), (m, v));
    }

    fn dataset(n: usize, d: usize, seed: u64) -> LabeledDataset {
        let mut rng = crate::rng::rng_from(seed);
        let x = Array2::from_shape_fn((n, d), |_| crate::rng::normal(&mut rng) * 2.0 + 0.5);
        LabeledDataset::new(x, vec![0; n], 1, Split::Train).unwrap()
    }

    #[test]
    fn recalibration_matches_full_pass_for_every_layer_and_partition() {
        let arch = ArchitectureSpec::bn_mlp(&[3, 6, 5, 2], Activation::Relu).unwrap();
        let ckpt = init_weights(&arch, InitScheme::Kaiming, 4);
        let data = dataset(37, 3, 1);
        let (whole, status) = recalibrate(&ckpt, &data, 37).unwrap();
        assert_eq!(status, RecalibStatus::Recalibrated { layers: 2, samples: 37 });
        for bs in [1, 5, 16] {
            let (parted, _) = recalibrate(&ckpt, &data, bs).unwrap();
            for (a, b) in whole.bn_stats().zip(parted.bn_stats()) {
                for (x, y) in a.mean.iter().zip(&b.mean).chain(a.var.iter().zip(&b.var)) {
                    assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-12), "{x} vs {y}");
                }
            }
        }
        // first layer stats are the plain moments of its pre-activations
        let z = ckpt.hidden_pre_activations(data.features(), 0).unwrap();
        let (m, _) = column_moments(&z);
        for (a, b) in whole.norms[0].as_ref().unwrap().stats.mean.iter().zip(&m) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(whole.flatten(), ckpt.flatten());
        assert_eq!(whole.bn_momentum, BnMomentum::Ema(0.1));
    }

    #[test]
    fn idempotent() {
        let arch = ArchitectureSpec::bn_mlp(&[3, 4, 2], Activation::Relu).unwrap();
        let ckpt = init_weights(&arch, InitScheme::Kaiming, 8);
        let data = dataset(20, 3, 2);
        let (once, _) = recalibrate(&ckpt, &data, 6).unwrap();
        let (twice, _) = recalibrate(&once, &data, 6).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn no_bn_is_a_no_op_and_empty_data_errors() {
        let arch = ArchitectureSpec::mlp(&[3, 4, 2], Activation::Relu).unwrap();
        let ckpt = init_weights(&arch, InitScheme::Kaiming, 8);
        let data = dataset(5, 3, 2);
        let (out, status) = recalibrate(&ckpt, &data, 2).unwrap();
        assert_eq!(status, RecalibStatus::NoBatchNorm);
        assert_eq!(out, ckpt);
        assert!(recalibrate(&ckpt, &data, 0).is_err());
    }
}
