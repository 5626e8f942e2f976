//! Gram-matrix PCA for `d >> n`.
//!
//! Four streamed passes: the mean, the `n x n` Gram matrix of centered rows
//! built block pair by block pair, an eigendecomposition of the Gram matrix
//! (exact Jacobi or randomized subspace iteration) and back-projection of the
//! sample-space eigenvectors into parameter space.

use ndarray::{s, Array1, Array2};

use super::{check_k, PcaModel};
use crate::linalg::{canonical_signs, orthonormalize_columns, sym_eigen};
use crate::par::{self, Execution};
use crate::rng::{self, stream};
use crate::{Error, Result};

/// Random access to the rows of an `n x d` sample matrix.
pub trait RowSource: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    /// Rows `start..start + count` as a `count x d` block.
    fn read_rows(&self, start: usize, count: usize) -> Result<Array2<f64>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RowSource for Array2<f64> {
    fn len(&self) -> usize {
        self.nrows()
    }
    fn dim(&self) -> usize {
        self.ncols()
    }
    fn read_rows(&self, start: usize, count: usize) -> Result<Array2<f64>> {
        Ok(self.slice(s![start..start + count, ..]).to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    pub micro_batch: usize,
    /// Full Jacobi eigendecomposition instead of randomized SVD.
    pub exact_eigen: bool,
    /// Seeds the Gaussian test matrix of the randomized path.
    pub seed: u64,
    pub execution: Execution,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            micro_batch: 32,
            exact_eigen: false,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

pub const POWER_ITERATIONS: usize = 5;
pub const OVERSAMPLING: usize = 10;

fn blocks(n: usize, size: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(size).map(|s| (s, (s + size).min(n) - s)).collect()
}

fn stream_mean(src: &dyn RowSource, micro_batch: usize) -> Result<Array1<f64>> {
    let mut sum = Array1::<f64>::zeros(src.dim());
    for (start, count) in blocks(src.len(), micro_batch) {
        let rows = src.read_rows(start, count)?;
        for row in rows.rows() {
            sum += &row;
        }
    }
    Ok(sum / src.len() as f64)
}

fn centered_block(src: &dyn RowSource, mean: &Array1<f64>, start: usize, count: usize) -> Result<Array2<f64>> {
    let mut rows = src.read_rows(start, count)?;
    if rows.dim() != (count, mean.len()) {
        return Err(Error::Shape(format!("row source returned {:?}, expected ({count}, {})", rows.dim(), mean.len())));
    }
    for mut row in rows.rows_mut() {
        row -= mean;
    }
    Ok(rows)
}

/// Entries are plain sequential dot products of centered rows, so every
/// entry is bit-identical whatever the micro-batch size.
fn gram(src: &dyn RowSource, mean: &Array1<f64>, opts: &DualOptions) -> Result<Array2<f64>> {
    let n = src.len();
    let bl = blocks(n, opts.micro_batch);
    let pairs: Vec<(usize, usize)> = (0..bl.len()).flat_map(|i| (i..bl.len()).map(move |j| (i, j))).collect();
    let tiles = par::try_map_indexed(opts.execution, pairs.len(), |p| {
        let (bi, bj) = pairs[p];
        let a = centered_block(src, mean, bl[bi].0, bl[bi].1)?;
        let b = if bi == bj { a.clone() } else { centered_block(src, mean, bl[bj].0, bl[bj].1)? };
        Ok::<_, Error>(Array2::from_shape_fn((a.nrows(), b.nrows()), |(r, c)| {
            a.row(r).iter().zip(b.row(c)).map(|(x, y)| x * y).sum::<f64>()
        }))
    })?;
    let mut g = Array2::zeros((n, n));
    for (&(bi, bj), tile) in pairs.iter().zip(tiles) {
        let (si, ci) = bl[bi];
        let (sj, cj) = bl[bj];
        g.slice_mut(s![si..si + ci, sj..sj + cj]).assign(&tile);
        g.slice_mut(s![sj..sj + cj, si..si + ci]).assign(&tile.t());
    }
    Ok(g)
}

/// Top-`k` eigenpairs of a PSD matrix by randomized subspace iteration.
fn randomized_eigen(g: &Array2<f64>, k: usize, seed: u64) -> (Vec<f64>, Array2<f64>) {
    let n = g.nrows();
    let l = (k + OVERSAMPLING).min(n);
    let mut r = rng::split(seed, stream::RSVD);
    let omega = Array2::from_shape_fn((n, l), |_| rng::normal(&mut r));
    let mut q = g.dot(&omega);
    orthonormalize_columns(&mut q);
    for _ in 0..POWER_ITERATIONS {
        q = g.dot(&q);
        orthonormalize_columns(&mut q);
    }
    let b = q.t().dot(g).dot(&q);
    let b = (&b + &b.t()) * 0.5;
    let (values, vecs) = sym_eigen(&b);
    (values, q.dot(&vecs))
}

/// Gram-matrix PCA over a streamed row source.
pub fn fit_dual(src: &dyn RowSource, k: usize, opts: &DualOptions) -> Result<PcaModel> {
    let (n, d) = (src.len(), src.dim());
    if opts.micro_batch == 0 {
        return Err(Error::Argument("micro_batch must be >= 1".into()));
    }
    if n < 2 {
        return Err(Error::Argument(format!("dual PCA needs at least 2 samples, got {n}")));
    }
    check_k(k, n, d)?;
    let mean = stream_mean(src, opts.micro_batch)?;
    let g = gram(src, &mean, opts)?;
    let total_variance = g.diag().sum();
    let (values, vectors) = if opts.exact_eigen {
        sym_eigen(&g)
    } else {
        randomized_eigen(&g, k, opts.seed)
    };
    let u = vectors.slice(s![.., ..k]).to_owned();
    let eigenvalues: Vec<f64> = values[..k].iter().map(|&l| l.max(0.0)).collect();

    let mut components = Array2::<f64>::zeros((d, k));
    for (start, count) in blocks(n, opts.micro_batch) {
        let rows = centered_block(src, &mean, start, count)?;
        components += &rows.t().dot(&u.slice(s![start..start + count, ..]));
    }
    // columns have norm sqrt(lambda); null directions get completed
    for (mut col, &l) in components.columns_mut().into_iter().zip(&eigenvalues) {
        let norm = col.dot(&col).sqrt();
        if norm > 1e-12 * total_variance.sqrt().max(1e-300) && l > 0.0 {
            col.mapv_inplace(|x| x / norm);
        } else {
            col.fill(0.0);
        }
    }
    orthonormalize_columns(&mut components);
    canonical_signs(&mut components);
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        n_samples: n,
        total_variance,
    })
}

#[cfg(test)]
pub(crate) fn gram_for_test(x: &Array2<f64>, micro_batch: usize, execution: Execution) -> Array2<f64> {
    let opts = DualOptions {
        micro_batch,
        execution,
        ..DualOptions::default()
    };
    let mean = stream_mean(x, micro_batch).unwrap();
    gram(x, &mean, &opts).unwrap()
}

#[cfg(test)]
mod tests {
    use super::super::fit_standard;
    use super::super::testutil::{low_rank_rows, spread_rows};
    use super::*;
    use ndarray::arr2;

    fn exact(mb: usize) -> DualOptions {
        DualOptions {
            micro_batch: mb,
            exact_eigen: true,
            ..DualOptions::default()
        }
    }

    #[test]
    fn two_point_example() {
        let x = arr2(&[[1.0, 0.0], [-1.0, 0.0]]);
        let mean = stream_mean(&x, 1).unwrap();
        let (vals, _) = sym_eigen(&gram(&x, &mean, &exact(1)).unwrap());
        assert!((vals[0] - 2.0).abs() < 1e-12 && vals[1].abs() < 1e-12);
        let m = fit_dual(&x, 1, &exact(1)).unwrap();
        assert!((m.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!((m.components[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_standard_pca_on_wide_data() {
        let x = spread_rows(20, 500, 5);
        let s = fit_standard(&x, 10).unwrap();
        let d = fit_dual(&x, 10, &exact(3)).unwrap();
        for (a, b) in s.eigenvalues.iter().zip(&d.eigenvalues) {
            assert!((a - b).abs() <= 1e-8 * a, "{a} vs {b}");
        }
        for (a, b) in s.components.iter().zip(d.components.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn randomized_path_agrees_on_leading_spectrum() {
        let x = low_rank_rows(40, 300, 8, 0.01, 6);
        let s = fit_standard(&x, 8).unwrap();
        let d = fit_dual(&x, 8, &DualOptions::default()).unwrap();
        for (a, b) in s.eigenvalues.iter().zip(&d.eigenvalues) {
            assert!((a - b).abs() <= 1e-6 * a, "{a} vs {b}");
        }
        let g = d.components.t().dot(&d.components);
        for i in 0..8 {
            for j in 0..8 {
                assert!((g[[i, j]] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gram_is_bit_identical_across_micro_batches_and_modes() {
        let x = spread_rows(23, 77, 7);
        let reference = gram_for_test(&x, 23, Execution::Sequential);
        for mb in [1, 2, 5, 8] {
            for exec in [Execution::Sequential, Execution::Parallel] {
                assert_eq!(gram_for_test(&x, mb, exec), reference);
            }
        }
    }

    #[test]
    fn degenerate_data_still_gives_orthonormal_components() {
        let x = arr2(&[[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0], [2.0, 2.0, 3.0, 4.0]]);
        let m = fit_dual(&x, 2, &exact(2)).unwrap();
        let g = m.components.t().dot(&m.components);
        assert!((g[[0, 1]]).abs() < 1e-12 && (g[[1, 1]] - 1.0).abs() < 1e-12);
        assert!(m.eigenvalues[1].abs() < 1e-12);
    }

    #[test]
    fn argument_errors() {
        let x = spread_rows(5, 9, 1);
        assert!(fit_dual(&x, 5, &exact(2)).is_err());
        assert!(fit_dual(&x, 2, &exact(0)).is_err());
    }
}
