//! Permutation assignments and their action on checkpoints.
//!
//! Convention: applying `p` to an axis gives `new[i] = old[p[i]]`.

use ndarray::{Array2, Axis};

use super::lap::is_permutation;
use crate::nn::{ArchitectureSpec, MhaWeights, WeightCheckpoint};
use crate::{Error, Result};

/// One tensor of a checkpoint that a hidden-layer permutation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRef {
    Weight(usize),
    Bias(usize),
    BnGamma(usize),
    BnBeta(usize),
    BnMean(usize),
    BnVar(usize),
}

/// `perm` acts on `axis` of `tensor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisBinding {
    pub tensor: TensorRef,
    pub axis: usize,
    pub perm: usize,
}

/// Which tensor axes each hidden-layer permutation touches.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationSpec {
    sizes: Vec<usize>,
    bindings: Vec<AxisBinding>,
}

impl PermutationSpec {
    /// Hidden layer `h` is permuted on the rows of dense layer `h`, its
    /// bias, every BN tensor of layer `h`, and the columns of dense `h + 1`.
    /// Input and output axes are never permuted.
    pub fn for_arch(arch: &ArchitectureSpec) -> Self {
        let mut bindings = Vec::new();
        for (h, &has_bn) in arch.bn_layers().iter().enumerate() {
            let bind = |tensor, axis| AxisBinding { tensor, axis, perm: h };
            bindings.push(bind(TensorRef::Weight(h), 0));
            bindings.push(bind(TensorRef::Bias(h), 0));
            if has_bn {
                bindings.extend([
                    bind(TensorRef::BnGamma(h), 0),
                    bind(TensorRef::BnBeta(h), 0),
                    bind(TensorRef::BnMean(h), 0),
                    bind(TensorRef::BnVar(h), 0),
                ]);
            }
            bindings.push(bind(TensorRef::Weight(h + 1), 1));
        }
        Self {
            sizes: arch.hidden_dims().to_vec(),
            bindings,
        }
    }

    pub fn perm_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn bindings(&self) -> &[AxisBinding] {
        &self.bindings
    }
}

/// Intra- and inter-head permutations of an attention block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPermutation {
    /// New head `i` is old head `heads[i]`.
    pub heads: Vec<usize>,
    /// Per new head, the permutation shared by query and key rows.
    pub qk: Vec<Vec<usize>>,
    /// Per new head, the permutation of value rows and of the matching
    /// output-projection columns.
    pub v: Vec<Vec<usize>>,
}

impl AttentionPermutation {
    pub fn identity(num_heads: usize, head_dim: usize) -> Self {
        let id: Vec<usize> = (0..head_dim).collect();
        Self {
            heads: (0..num_heads).collect(),
            qk: vec![id.clone(); num_heads],
            v: vec![id; num_heads],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationAssignment {
    /// One permutation per hidden layer.
    pub layers: Vec<Vec<usize>>,
    pub attention: Option<AttentionPermutation>,
}

impl PermutationAssignment {
    pub fn identity(arch: &ArchitectureSpec) -> Self {
        Self {
            layers: arch.hidden_dims().iter().map(|&d| (0..d).collect()).collect(),
            attention: arch
                .attention()
                .map(|g| AttentionPermutation::identity(g.num_heads, g.head_dim)),
        }
    }

    pub fn is_identity(&self) -> bool {
        let id = |p: &Vec<usize>| p.iter().enumerate().all(|(i, &j)| i == j);
        self.layers.iter().all(id)
            && self
                .attention
                .as_ref()
                .is_none_or(|a| id(&a.heads) && a.qk.iter().all(id) && a.v.iter().all(id))
    }

    /// The assignment undoing this one.
    pub fn inverse(&self) -> Self {
        use super::lap::invert;
        let attention = self.attention.as_ref().map(|a| {
            let heads = invert(&a.heads);
            // new head i came from old head heads[i] with row map qk[i];
            // the inverse sends old head heads[i] back with the inverse map
            let qk = heads.iter().map(|&i| invert(&a.qk[i])).collect();
            let v = heads.iter().map(|&i| invert(&a.v[i])).collect();
            AttentionPermutation { heads, qk, v }
        });
        Self {
            layers: self.layers.iter().map(|p| invert(p)).collect(),
            attention,
        }
    }
}

fn permute_axis<T: Clone>(a: &Array2<T>, axis: usize, p: &[usize]) -> Array2<T> {
    a.select(Axis(axis), p)
}

fn permute_vec<T: Clone>(v: &[T], p: &[usize]) -> Vec<T> {
    p.iter().map(|&i| v[i].clone()).collect()
}

fn check_perm(p: &[usize], len: usize, what: &str) -> Result<()> {
    if p.len() != len || !is_permutation(p) {
        return Err(Error::Shape(format!("{what}: expected a permutation of length {len}")));
    }
    Ok(())
}

/// Permute hidden units (and attention heads) of a checkpoint. The result
/// computes the same function; BN running statistics move with their units.
pub fn apply_permutation(ckpt: &WeightCheckpoint, perm: &PermutationAssignment) -> Result<WeightCheckpoint> {
    let spec = PermutationSpec::for_arch(ckpt.arch());
    if perm.layers.len() != spec.perm_sizes().len() {
        return Err(Error::Shape(format!(
            "assignment has {} layer permutations, architecture has {} hidden layers",
            perm.layers.len(),
            spec.perm_sizes().len()
        )));
    }
    for (h, (p, &n)) in perm.layers.iter().zip(spec.perm_sizes()).enumerate() {
        check_perm(p, n, &format!("hidden layer {h}"))?;
    }
    let mut out = ckpt.clone();
    for b in spec.bindings() {
        let p = &perm.layers[b.perm];
        match b.tensor {
            TensorRef::Weight(l) => out.dense[l].weight = permute_axis(&out.dense[l].weight, b.axis, p),
            TensorRef::Bias(l) => out.dense[l].bias = out.dense[l].bias.select(Axis(0), p),
            TensorRef::BnGamma(h) => bn(&mut out, h).gamma = bn(&mut out, h).gamma.select(Axis(0), p),
            TensorRef::BnBeta(h) => bn(&mut out, h).beta = bn(&mut out, h).beta.select(Axis(0), p),
            TensorRef::BnMean(h) => bn(&mut out, h).stats.mean = permute_vec(&bn(&mut out, h).stats.mean, p),
            TensorRef::BnVar(h) => bn(&mut out, h).stats.var = permute_vec(&bn(&mut out, h).stats.var, p),
        }
    }
    match (&mut out.attention, &perm.attention) {
        (Some(attn), Some(ap)) => *attn = permute_attention(attn, ap)?,
        (None, None) | (Some(_), None) => {}
        (None, Some(_)) => {
            return Err(Error::Shape("attention permutation given for a network without attention".into()))
        }
    }
    Ok(out)
}

fn bn(c: &mut WeightCheckpoint, h: usize) -> &mut crate::nn::BatchNorm {
    c.norms[h].as_mut().expect("binding refers to a BN layer")
}

/// Apply inter-head and intra-head permutations to an attention block.
pub fn permute_attention(w: &MhaWeights, p: &AttentionPermutation) -> Result<MhaWeights> {
    let g = w.geometry();
    check_perm(&p.heads, g.num_heads, "head permutation")?;
    if p.qk.len() != g.num_heads || p.v.len() != g.num_heads {
        return Err(Error::Shape("one intra-head permutation per head is required".into()));
    }
    for i in 0..g.num_heads {
        check_perm(&p.qk[i], g.head_dim, "query/key permutation")?;
        check_perm(&p.v[i], g.head_dim, "value permutation")?;
    }
    let mut out = w.clone();
    let mut cols = Vec::with_capacity(g.embed_dim);
    for i in 0..g.num_heads {
        let src = p.heads[i];
        out.query[i] = permute_axis(&w.query[src], 0, &p.qk[i]);
        out.key[i] = permute_axis(&w.key[src], 0, &p.qk[i]);
        out.value[i] = permute_axis(&w.value[src], 0, &p.v[i]);
        cols.extend(p.v[i].iter().map(|&r| src * g.head_dim + r));
    }
    out.output = permute_axis(&w.output, 1, &cols);
    Ok(out)
}
