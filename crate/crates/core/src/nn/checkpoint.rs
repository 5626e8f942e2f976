use ndarray::{Array1, Array2};

use super::arch::ArchitectureSpec;
use super::mha::MhaWeights;
use crate::bn_recalib::RunningStats;
use crate::{Error, Result};

/// One affine layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Learned affine parameters of a batch-norm layer plus its running
/// statistics. Only `gamma` and `beta` are part of the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub stats: RunningStats,
}

impl BatchNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            stats: RunningStats::reset(dim),
        }
    }
}

/// How train-mode forward passes fold batch statistics into running stats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BnMomentum {
    /// Exponential moving average with the given momentum.
    Ema(f64),
    /// Exact pooled mean/variance over every batch seen since the last reset.
    Cumulative,
}

pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

impl Default for BnMomentum {
    fn default() -> Self {
        BnMomentum::Ema(DEFAULT_BN_MOMENTUM)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Metadata {
    pub seed: u64,
    /// Held-out accuracy for trained networks; NaN when never evaluated.
    pub metric: f64,
}

// Bitwise so that unevaluated (NaN) metrics compare equal.
impl PartialEq for Metadata {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.metric.to_bits() == other.metric.to_bits()
    }
}

impl Default for Metadata {
    fn default() -> Self {
        Self {
            seed: 0,
            metric: f64::NAN,
        }
    }
}

/// All parameters of one network plus its batch-norm sidecar and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCheckpoint {
    arch: ArchitectureSpec,
    pub dense: Vec<Dense>,
    /// One slot per hidden layer; `Some` where the architecture has BN.
    pub norms: Vec<Option<BatchNorm>>,
    pub attention: Option<MhaWeights>,
    pub meta: Metadata,
    pub bn_momentum: BnMomentum,
}

impl WeightCheckpoint {
    /// All-zero weights, identity batch norm, fresh running statistics.
    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        let dims = arch.layer_dims();
        let dense = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        let norms = arch
            .hidden_dims()
            .iter()
            .zip(arch.bn_layers())
            .map(|(&d, &bn)| bn.then(|| BatchNorm::identity(d)))
            .collect();
        Self {
            arch: arch.clone(),
            dense,
            norms,
            attention: arch.attention().map(MhaWeights::zeros),
            meta: Metadata::default(),
            bn_momentum: BnMomentum::default(),
        }
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Flat parameter vector: for every affine layer in forward order the
    /// weight (row-major) then the bias, followed by that layer's BN gamma
    /// and beta when present; the attention block (if any) comes last.
    /// Running statistics are not included.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for (l, dense) in self.dense.iter().enumerate() {
            out.extend(dense.weight.iter());
            out.extend(dense.bias.iter());
            if let Some(Some(bn)) = self.norms.get(l) {
                out.extend(bn.gamma.iter());
                out.extend(bn.beta.iter());
            }
        }
        if let Some(attn) = &self.attention {
            attn.flatten_into(&mut out);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten). Running statistics are reset
    /// and metadata defaulted.
    pub fn unflatten(values: &[f32], arch: &ArchitectureSpec) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, architecture needs {}",
                values.len(),
                arch.param_count()
            )));
        }
        let mut ckpt = Self::zeros(arch);
        let mut cursor = values;
        let mut take = |n: usize| {
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            head
        };
        for l in 0..ckpt.dense.len() {
            let dense = &mut ckpt.dense[l];
            let n = dense.weight.len();
            dense.weight.as_slice_mut().unwrap().copy_from_slice(take(n));
            let n = dense.bias.len();
            dense.bias.as_slice_mut().unwrap().copy_from_slice(take(n));
            if let Some(Some(bn)) = ckpt.norms.get_mut(l) {
                let n = bn.gamma.len();
                bn.gamma.as_slice_mut().unwrap().copy_from_slice(take(n));
                bn.beta.as_slice_mut().unwrap().copy_from_slice(take(n));
            }
        }
        if let Some(attn) = &mut ckpt.attention {
            let n = attn.geometry().param_count();
            attn.fill_from(take(n));
        }
        Ok(ckpt)
    }

    /// Running statistics of every BN layer, in hidden-layer order.
    pub fn bn_stats(&self) -> impl Iterator<Item = &RunningStats> {
        self.norms.iter().flatten().map(|bn| &bn.stats)
    }

    /// Copy running statistics from another checkpoint of the same architecture.
    pub fn copy_bn_stats_from(&mut self, other: &WeightCheckpoint) -> Result<()> {
        if other.arch != self.arch {
            return Err(Error::Argument("cannot copy BN statistics across architectures".into()));
        }
        for (mine, theirs) in self.norms.iter_mut().zip(&other.norms) {
            if let (Some(m), Some(t)) = (mine, theirs) {
                m.stats = t.stats.clone();
            }
        }
        Ok(())
    }

    pub(crate) fn check_same_arch(&self, other: &WeightCheckpoint) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::Argument(format!(
                "architecture mismatch: {:?} vs {:?}",
                self.arch.layer_dims(),
                other.arch.layer_dims()
            )));
        }
        Ok(())
    }
}
