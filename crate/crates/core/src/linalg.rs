//! Small dense linear-algebra kernels used by alignment and PCA.

use ndarray::{Array1, Array2, ArrayView1, Axis};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as columns.
pub fn sym_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigen needs a square matrix");
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let vectors = v.select(Axis(1), &order);
    (values, vectors)
}

/// Singular values of `m` in descending order.
pub fn singular_values(m: &Array2<f64>) -> Vec<f64> {
    let gram = if m.nrows() <= m.ncols() { m.dot(&m.t()) } else { m.t().dot(m) };
    sym_eigen(&gram).0.into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Orthonormalize the columns of `a` in place with modified Gram-Schmidt.
/// Columns that collapse numerically are replaced by canonical basis
/// vectors orthogonal to the ones already accepted.
pub fn orthonormalize_columns(a: &mut Array2<f64>) {
    let (rows, cols) = a.dim();
    let mut next_basis = 0;
    for j in 0..cols {
        let original = a.column(j).dot(&a.column(j)).sqrt();
        project_out(a, j);
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        if norm > 1e-10 * original.max(1e-300) && norm > 0.0 {
            a.column_mut(j).mapv_inplace(|x| x / norm);
            continue;
        }
        // complete with the first canonical vector that survives projection
        loop {
            assert!(next_basis < rows, "cannot complete more columns than rows");
            a.column_mut(j).fill(0.0);
            a[[next_basis, j]] = 1.0;
            next_basis += 1;
            project_out(a, j);
            let norm = a.column(j).dot(&a.column(j)).sqrt();
            if norm > 1e-6 {
                a.column_mut(j).mapv_inplace(|x| x / norm);
                break;
            }
        }
    }
}

fn project_out(a: &mut Array2<f64>, j: usize) {
    for _ in 0..2 {
        for i in 0..j {
            let d = a.column(i).dot(&a.column(j));
            let qi = a.column(i).to_owned();
            a.column_mut(j).scaled_add(-d, &qi);
        }
    }
}

/// Flip each column so that its largest-magnitude entry is positive
/// (first such entry on ties).
pub fn canonical_signs(a: &mut Array2<f64>) {
    for mut col in a.columns_mut() {
        if pivot_sign(col.view()) < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
}

fn pivot_sign(col: ArrayView1<f64>) -> f64 {
    let mut best = 0.0f64;
    for &x in col {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Column means of a row-major data matrix.
pub fn column_mean(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    #[test]
    fn diagonal_and_two_by_two() {
        let (l, v) = sym_eigen(&arr2(&[[2.0, 1.0], [1.0, 2.0]]));
        assert!((l[0] - 3.0).abs() < 1e-12 && (l[1] - 1.0).abs() < 1e-12);
        assert!((v[[0, 0]].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        let (l, _) = sym_eigen(&arr2(&[[1.0, 0.0], [0.0, 5.0]]));
        assert_eq!(l, vec![5.0, 1.0]);
    }

    #[test]
    fn singular_values_of_rectangular() {
        let s = singular_values(&arr2(&[[3.0, 0.0, 0.0], [0.0, -4.0, 0.0]]));
        assert!((s[0] - 4.0).abs() < 1e-12 && (s[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_columns_are_completed() {
        let mut a = arr2(&[[1.0, 2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        orthonormalize_columns(&mut a);
        let g = a.t().dot(&a);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn eigen_reconstructs(vals in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let b = Array2::from_shape_vec((4, 4), vals).unwrap();
            let a = &b + &b.t();
            let (l, v) = sym_eigen(&a);
            let recon = v.dot(&Array2::from_diag(&Array1::from(l.clone()))).dot(&v.t());
            for (x, y) in recon.iter().zip(a.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert!(l.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
