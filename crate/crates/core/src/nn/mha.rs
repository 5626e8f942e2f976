use ndarray::{s, Array2, Axis};

use super::arch::AttentionGeometry;
use super::ops::softmax_rows;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Weights of a toy multi-head attention block. Each per-head projection is
/// `head_dim x embed_dim`; `output` is `embed_dim x embed_dim` and its column
/// block `i*head_dim..(i+1)*head_dim` reads head `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaWeights {
    geometry: AttentionGeometry,
    pub query: Vec<Array2<f32>>,
    pub key: Vec<Array2<f32>>,
    pub value: Vec<Array2<f32>>,
    pub output: Array2<f32>,
}

impl MhaWeights {
    pub fn zeros(geometry: AttentionGeometry) -> Self {
        let head = || Array2::zeros((geometry.head_dim, geometry.embed_dim));
        Self {
            geometry,
            query: (0..geometry.num_heads).map(|_| head()).collect(),
            key: (0..geometry.num_heads).map(|_| head()).collect(),
            value: (0..geometry.num_heads).map(|_| head()).collect(),
            output: Array2::zeros((geometry.embed_dim, geometry.embed_dim)),
        }
    }

    /// Gaussian entries with variance `1 / embed_dim`.
    pub fn random(geometry: AttentionGeometry, rng: &mut Rng) -> Self {
        let mut w = Self::zeros(geometry);
        let scale = (1.0 / geometry.embed_dim as f64).sqrt();
        for m in w.tensors_mut() {
            m.mapv_inplace(|_| (rng::normal(rng) * scale) as f32);
        }
        w
    }

    pub fn geometry(&self) -> AttentionGeometry {
        self.geometry
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Array2<f32>> {
        let heads = self
            .query
            .iter_mut()
            .zip(self.key.iter_mut())
            .zip(self.value.iter_mut())
            .flat_map(|((q, k), v)| [q, k, v]);
        heads.chain(std::iter::once(&mut self.output))
    }

    /// Per head `query, key, value`, then the output projection.
    pub(crate) fn flatten_into(&self, out: &mut Vec<f32>) {
        for h in 0..self.geometry.num_heads {
            out.extend(self.query[h].iter());
            out.extend(self.key[h].iter());
            out.extend(self.value[h].iter());
        }
        out.extend(self.output.iter());
    }

    pub(crate) fn fill_from(&mut self, mut values: &[f32]) {
        for m in self.tensors_mut() {
            let n = m.len();
            m.as_slice_mut().unwrap().copy_from_slice(&values[..n]);
            values = &values[n..];
        }
    }

    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.geometry.param_count());
        self.flatten_into(&mut out);
        out
    }

    fn check_shapes(&self) -> Result<()> {
        let g = self.geometry;
        let head_ok = |v: &[Array2<f32>]| {
            v.len() == g.num_heads && v.iter().all(|m| m.dim() == (g.head_dim, g.embed_dim))
        };
        if !(head_ok(&self.query) && head_ok(&self.key) && head_ok(&self.value))
            || self.output.dim() != (g.embed_dim, g.embed_dim)
        {
            return Err(Error::Shape(format!("attention tensors do not match geometry {g:?}")));
        }
        Ok(())
    }
}

fn to_f64(m: &Array2<f32>) -> Array2<f64> {
    m.mapv(f64::from)
}

/// Scaled dot-product multi-head attention over `tokens` (`T x embed_dim`).
pub fn mha_forward(weights: &MhaWeights, tokens: &Array2<f64>) -> Result<Array2<f64>> {
    weights.check_shapes()?;
    let g = weights.geometry;
    if tokens.ncols() != g.embed_dim {
        return Err(Error::Shape(format!(
            "tokens have width {}, attention expects {}",
            tokens.ncols(),
            g.embed_dim
        )));
    }
    let scale = 1.0 / (g.head_dim as f64).sqrt();
    let mut concat = Array2::<f64>::zeros((tokens.nrows(), g.embed_dim));
    for h in 0..g.num_heads {
        let q = tokens.dot(&to_f64(&weights.query[h]).t());
        let k = tokens.dot(&to_f64(&weights.key[h]).t());
        let v = tokens.dot(&to_f64(&weights.value[h]).t());
        let mut scores = q.dot(&k.t()) * scale;
        softmax_rows(&mut scores);
        let head = scores.dot(&v);
        concat
            .slice_mut(s![.., h * g.head_dim..(h + 1) * g.head_dim])
            .assign(&head);
    }
    Ok(concat.dot(&to_f64(&weights.output).t()))
}

/// Mean of the rows of `m`, broadcast to every row. Used by tests as the
/// closed form of uniform attention.
pub fn row_mean_broadcast(m: &Array2<f64>) -> Array2<f64> {
    let mean = m.mean_axis(Axis(0)).unwrap();
    let mut out = Array2::zeros(m.dim());
    for mut row in out.rows_mut() {
        row.assign(&mean);
    }
    out
}
