use nalgebra::DMatrix;
use ndarray::Array2;

use super::{check_k, PcaModel};
use crate::linalg::{canonical_signs, column_mean};
use crate::Result;

/// Exact PCA via the thin SVD of the centered sample matrix (`n x d`).
pub fn fit_standard(x: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    check_k(k, n, d)?;
    let mean = column_mean(x);
    let centered = x - &mean.view().insert_axis(ndarray::Axis(0));
    let total_variance = centered.iter().map(|v| v * v).sum();
    let (components, eigenvalues) = top_right_singular(&centered, k);
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        n_samples: n,
        total_variance,
    })
}

/// Top-`k` right singular vectors (as `d x k` columns, sign-normalized) and
/// squared singular values of `m`.
pub(crate) fn top_right_singular(m: &Array2<f64>, k: usize) -> (Array2<f64>, Vec<f64>) {
    let (rows, cols) = m.dim();
    let d = cols;
    if k == 0 || rows == 0 {
        return (Array2::zeros((d, 0)), Vec::new());
    }
    let mat = DMatrix::from_row_iterator(rows, cols, m.iter().cloned());
    let svd = mat.svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut comps = Array2::zeros((d, k));
    let mut values = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        for j in 0..d {
            comps[[j, c]] = vt[(i, j)];
        }
        values.push(svd.singular_values[i].powi(2));
    }
    canonical_signs(&mut comps);
    (comps, values)
}


#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn two_point_example() {
        let m = fit_standard(&arr2(&[[1.0, 0.0], [-1.0, 0.0]]), 1).unwrap();
        assert!((m.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!((m.components[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(m.components[[1, 0]].abs() < 1e-12);
    }

    #[test]
    fn k_zero_and_duplicates() {
        let x = arr2(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        let m0 = fit_standard(&x, 0).unwrap();
        let z = m0.transform(x.row(0)).unwrap();
        assert_eq!(m0.inverse_transform(z.view()).unwrap(), m0.mean);
        let m = fit_standard(&x, 2).unwrap();
        assert!(m.eigenvalues.iter().all(|&l| l.abs() < 1e-20));
    }

    #[test]
    fn rank_bound_is_enforced() {
        let x = super::super::testutil::spread_rows(5, 10, 0);
        assert!(fit_standard(&x, 5).is_err());
        assert!(fit_standard(&x, 4).is_ok());
    }

    #[test]
    fn components_are_orthonormal_and_ordered() {
        let x = super::super::testutil::spread_rows(20, 60, 3);
        let m = fit_standard(&x, 10).unwrap();
        let g = m.components.t().dot(&m.components);
        for i in 0..10 {
            for j in 0..10 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-10);
            }
        }
        assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }
}
