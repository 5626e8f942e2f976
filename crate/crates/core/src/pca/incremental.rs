use ndarray::{concatenate, Array1, Array2, Axis};

use super::standard::top_right_singular;
use super::{check_k, PcaModel};
use crate::linalg::column_mean;
use crate::{Error, Result};

/// Single-pass batched PCA. Each batch is merged into the running mean and
/// a rank-limited basis by an SVD of
/// `[diag(S) V^T ; batch - batch_mean ; mean-correction row]`.
///
/// The retained rank is `k`; when the accumulated data has rank at most `k`
/// the result equals the exact decomposition.
pub fn fit_incremental<I>(batches: I, k: usize) -> Result<PcaModel>
where
    I: IntoIterator<Item = Array2<f64>>,
{
    let mut n = 0usize;
    let mut mean: Option<Array1<f64>> = None;
    // scaled basis rows sqrt(lambda_i) v_i^T
    let mut scaled: Option<Array2<f64>> = None;
    // per-column sum of squared deviations, merged batch by batch
    let mut m2: Option<Array1<f64>> = None;
    for batch in batches {
        let nb = batch.nrows();
        if nb == 0 {
            continue;
        }
        let d = batch.ncols();
        if let Some(mu) = &mean {
            if mu.len() != d {
                return Err(Error::Shape(format!("batch width {d} differs from {}", mu.len())));
            }
        }
        let bmean = column_mean(&batch);
        let centered = &batch - &bmean.view().insert_axis(Axis(0));
        let bm2 = centered.map_axis(Axis(0), |c| c.iter().map(|v| v * v).sum::<f64>());
        let (stacked, new_mean, new_m2) = match (&mean, &scaled, &m2) {
            (Some(mu), Some(basis), Some(acc)) => {
                let total = (n + nb) as f64;
                let delta = &bmean - mu;
                let new_mean = mu + &(&delta * (nb as f64 / total));
                let corr = &delta * ((n as f64 * nb as f64) / total).sqrt();
                let new_m2 = acc + &bm2 + &(&delta * &delta * (n as f64 * nb as f64 / total));
                let stacked = concatenate![Axis(0), basis.view(), centered.view(), corr.insert_axis(Axis(0))];
                (stacked, new_mean, new_m2)
            }
            _ => (centered, bmean, bm2),
        };
        let keep = k.min(stacked.nrows()).min(d);
        let (v, lambdas) = top_right_singular(&stacked, keep);
        let mut basis = v.t().to_owned();
        for (mut row, l) in basis.rows_mut().into_iter().zip(&lambdas) {
            row.mapv_inplace(|x| x * l.sqrt());
        }
        scaled = Some(basis);
        mean = Some(new_mean);
        m2 = Some(new_m2);
        n += nb;
    }
    let mean = mean.ok_or_else(|| Error::Argument("incremental PCA received no rows".into()))?;
    check_k(k, n, mean.len())?;
    let basis = scaled.unwrap();
    // recover unit components and eigenvalues from the scaled basis
    let (components, eigenvalues) = top_right_singular(&basis, k.min(basis.nrows()));
    if components.ncols() < k {
        return Err(Error::Argument(format!("only {} components could be estimated", components.ncols())));
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        n_samples: n,
        total_variance: m2.unwrap().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{low_rank_rows, spread_rows};
    use super::super::fit_standard;
    use super::*;
    use ndarray::s;

    fn batches(x: &Array2<f64>, count: usize) -> Vec<Array2<f64>> {
        let size = x.nrows().div_ceil(count);
        (0..x.nrows())
            .step_by(size)
            .map(|i| x.slice(s![i..(i + size).min(x.nrows()), ..]).to_owned())
            .collect()
    }

    #[test]
    fn one_batch_equals_standard() {
        let x = spread_rows(30, 50, 1);
        let a = fit_standard(&x, 8).unwrap();
        let b = fit_incremental(vec![x.clone()], 8).unwrap();
        for (p, q) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((p - q).abs() <= 1e-8 * p.abs().max(1.0));
        }
        for (p, q) in a.components.iter().zip(b.components.iter()) {
            assert!((p - q).abs() <= 1e-8);
        }
        assert!((&a.mean - &b.mean).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn batching_does_not_change_the_spectrum() {
        let x = low_rank_rows(60, 40, 8, 0.01, 2);
        let one = fit_incremental(vec![x.clone()], 12).unwrap();
        let five = fit_incremental(batches(&x, 5), 12).unwrap();
        for (p, q) in one.eigenvalues.iter().zip(&five.eigenvalues).take(8) {
            assert!((p - q).abs() <= 1e-4 * p, "{p} vs {q}");
        }
        assert!((one.total_variance - five.total_variance).abs() < 1e-8 * one.total_variance);
    }

    #[test]
    fn full_rank_explains_everything() {
        let x = spread_rows(100, 150, 3);
        let m = fit_incremental(batches(&x, 5), 99).unwrap();
        assert!((m.explained_variance_ratio() - 1.0).abs() < 1e-6);
        let back = m.inverse_transform_rows(&m.transform_rows(&x).unwrap()).unwrap();
        assert!((&back - &x).iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn empty_stream_is_rejected() {
        assert!(matches!(fit_incremental(Vec::<Array2<f64>>::new(), 1), Err(Error::Argument(_))));
    }
}
