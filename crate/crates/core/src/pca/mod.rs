//! Principal component analysis over population weight matrices.
//!
//! Three fitting routes produce the same [`PcaModel`]: an exact SVD of the
//! centered data ([`fit_standard`]), a batched incremental update
//! ([`fit_incremental`]) and the Gram-matrix ("dual") route that streams rows
//! and never forms a `d x d` object ([`fit_dual`]).
//!
//! Eigenvalues are those of the Gram matrix of the centered rows, i.e. the
//! squared singular values of the centered data (not divided by `n - 1`).

mod dual;
mod incremental;
mod io;
mod standard;

use ndarray::{Array1, Array2, ArrayView1, Axis};

pub use dual::{fit_dual, DualOptions, RowSource};
pub use incremental::fit_incremental;
pub use io::{load_pca, save_pca};
pub use standard::fit_standard;

use crate::{Error, Result};

/// Number of retained components used when none is configured.
pub fn default_components(n_samples: usize) -> usize {
    n_samples.saturating_sub(1).min(99)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `d x k`, orthonormal columns.
    pub components: Array2<f64>,
    /// Descending, one per component.
    pub eigenvalues: Vec<f64>,
    pub n_samples: usize,
    /// Sum of all Gram eigenvalues of the training data. Not persisted; a
    /// loaded model reports the retained sum.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        let kept: f64 = self.eigenvalues.iter().sum();
        if self.total_variance <= 0.0 {
            1.0
        } else {
            kept / self.total_variance
        }
    }

    fn check_dim(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::Shape(format!("{what} has length {got}, expected {want}")));
        }
        Ok(())
    }

    /// `P^T (x - mu)`.
    pub fn transform(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(x.len(), self.dim(), "input vector")?;
        Ok(self.components.t().dot(&(&x - &self.mean)))
    }

    /// `P z + mu`.
    pub fn inverse_transform(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(z.len(), self.n_components(), "latent vector")?;
        Ok(self.components.dot(&z) + &self.mean)
    }

    /// Row-wise [`transform`](Self::transform).
    pub fn transform_rows(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols(), self.dim(), "input rows")?;
        Ok((x - &self.mean.view().insert_axis(Axis(0))).dot(&self.components))
    }

    /// Row-wise [`inverse_transform`](Self::inverse_transform).
    pub fn inverse_transform_rows(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(z.ncols(), self.n_components(), "latent rows")?;
        Ok(z.dot(&self.components.t()) + self.mean.view().insert_axis(Axis(0)))
    }
}

pub(crate) fn check_k(k: usize, n: usize, d: usize) -> Result<()> {
    if n < 2 && k > 0 {
        return Err(Error::Argument(format!("PCA needs at least 2 samples, got {n}")));
    }
    if k > n.saturating_sub(1) || k > d {
        return Err(Error::Argument(format!(
            "k = {k} exceeds the rank bound min(n - 1, d) = {}",
            n.saturating_sub(1).min(d)
        )));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use ndarray::Array2;

    /// Rows with decaying per-direction scale so the spectrum is well separated.
    pub fn spread_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::rng_from(seed);
        let basis = Array2::from_shape_fn((n, d), |_| crate::rng::normal(&mut rng));
        let mut x = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                x[[i, j]] = basis[[i, j]] * (1.0 + 3.0 / (1.0 + j as f64 / 7.0)) + 0.5;
            }
        }
        x
    }

    /// `rank` well-separated directions (scales 10, 9, ...) plus small
    /// isotropic noise.
    pub fn low_rank_rows(n: usize, d: usize, rank: usize, noise: f64, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::rng_from(seed);
        let dirs = Array2::from_shape_fn((rank, d), |_| crate::rng::normal(&mut rng) / (d as f64).sqrt());
        let coef = Array2::from_shape_fn((n, rank), |(_, j)| crate::rng::normal(&mut rng) * (10.0 - j as f64));
        let noise = Array2::from_shape_fn((n, d), |_| crate::rng::normal(&mut rng) * noise);
        coef.dot(&dirs) + noise + 1.0
    }
}
