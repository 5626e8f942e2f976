//! Alignment of multi-head attention blocks: heads are paired by comparing
//! the singular-value spectra of their projections, then rows inside each
//! head are matched by inner products.

use ndarray::{Array2, Axis};

use super::lap::{solve_lap_max, solve_lap_min};
use super::perm::{permute_attention, AttentionPermutation};
use crate::linalg::singular_values;
use crate::nn::MhaWeights;
use crate::{Error, Result};

fn f64s(m: &Array2<f32>) -> Array2<f64> {
    m.mapv(f64::from)
}

fn spectrum_distance(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    let sa = singular_values(&f64s(a));
    let sb = singular_values(&f64s(b));
    sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `D[i, j]`: summed spectral distance between reference head `i` and head
/// `j` of `a` over the query, key and value projections.
pub fn spectral_distance_matrix(a: &MhaWeights, reference: &MhaWeights) -> Array2<f64> {
    let h = a.geometry().num_heads;
    Array2::from_shape_fn((h, h), |(i, j)| {
        spectrum_distance(&reference.query[i], &a.query[j])
            + spectrum_distance(&reference.key[i], &a.key[j])
            + spectrum_distance(&reference.value[i], &a.value[j])
    })
}

fn intra_head(a: &MhaWeights, reference: &MhaWeights, i: usize, src: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let hd = a.geometry().head_dim;
    let qk = f64s(&reference.query[i]).dot(&f64s(&a.query[src]).t())
        + f64s(&reference.key[i]).dot(&f64s(&a.key[src]).t());
    let out_ref = f64s(&reference.output);
    let out_a = f64s(&a.output);
    let cols_ref: Vec<usize> = (i * hd..(i + 1) * hd).collect();
    let cols_a: Vec<usize> = (src * hd..(src + 1) * hd).collect();
    let v = f64s(&reference.value[i]).dot(&f64s(&a.value[src]).t())
        + out_ref.select(Axis(1), &cols_ref).t().dot(&out_a.select(Axis(1), &cols_a));
    Ok((solve_lap_max(&qk)?.perm, solve_lap_max(&v)?.perm))
}

/// Align attention block `a` to `reference`. Returns the permutation and the
/// permuted block, which computes the same function as `a`.
pub fn transfusion_align(
    a: &MhaWeights,
    reference: &MhaWeights,
    iters: usize,
) -> Result<(AttentionPermutation, MhaWeights)> {
    let g = a.geometry();
    if g != reference.geometry() {
        return Err(Error::Argument(format!(
            "attention geometry mismatch: {g:?} vs {:?}",
            reference.geometry()
        )));
    }
    if iters == 0 {
        return Err(Error::Argument("iters must be >= 1".into()));
    }
    let mut current = AttentionPermutation::identity(g.num_heads, g.head_dim);
    for _ in 0..iters {
        let heads = solve_lap_min(&spectral_distance_matrix(a, reference))?.perm;
        let mut next = AttentionPermutation {
            heads: heads.clone(),
            qk: Vec::with_capacity(g.num_heads),
            v: Vec::with_capacity(g.num_heads),
        };
        for (i, &src) in heads.iter().enumerate() {
            let (qk, v) = intra_head(a, reference, i, src)?;
            next.qk.push(qk);
            next.v.push(v);
        }
        let done = next == current;
        current = next;
        if done {
            break;
        }
    }
    let aligned = permute_attention(a, &current)?;
    Ok((current, aligned))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::perm::PermutationAssignment;
    use crate::nn::{mha_forward, AttentionGeometry};
    use crate::rng;

    fn shuffled(n: usize, r: &mut rng::Rng) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        rng::shuffle(r, &mut p);
        p
    }

    #[test]
    fn self_alignment_is_identity() {
        let g = AttentionGeometry::new(4, 3);
        let w = MhaWeights::random(g, &mut rng::rng_from(1));
        let (p, out) = transfusion_align(&w, &w, 10).unwrap();
        assert_eq!(p, AttentionPermutation::identity(4, 3));
        assert_eq!(out, w);
    }

    #[test]
    fn recovers_known_permutations() {
        let g = AttentionGeometry::new(4, 5);
        let mut r = rng::rng_from(3);
        for _ in 0..5 {
            let reference = MhaWeights::random(g, &mut r);
            let pi = AttentionPermutation {
                heads: shuffled(4, &mut r),
                qk: (0..4).map(|_| shuffled(5, &mut r)).collect(),
                v: (0..4).map(|_| shuffled(5, &mut r)).collect(),
            };
            let a = permute_attention(&reference, &pi).unwrap();
            let (p, aligned) = transfusion_align(&a, &reference, 10).unwrap();
            let expected = PermutationAssignment {
                layers: vec![],
                attention: Some(pi),
            }
            .inverse()
            .attention
            .unwrap();
            assert_eq!(p, expected);
            assert_eq!(aligned, reference);
        }
    }

    #[test]
    fn alignment_preserves_function() {
        let g = AttentionGeometry::new(3, 4);
        let mut r = rng::rng_from(9);
        let a = MhaWeights::random(g, &mut r);
        let reference = MhaWeights::random(g, &mut r);
        let (_, aligned) = transfusion_align(&a, &reference, 10).unwrap();
        let tokens = Array2::from_shape_fn((100, g.embed_dim), |_| rng::normal(&mut r));
        let x = mha_forward(&a, &tokens).unwrap();
        let y = mha_forward(&aligned, &tokens).unwrap();
        let diff = x.iter().zip(y.iter()).fold(0.0f64, |d, (p, q)| d.max((p - q).abs()));
        assert!(diff <= 1e-4);
    }

    #[test]
    fn spectra_ignore_row_shuffles_within_heads() {
        let g = AttentionGeometry::new(3, 4);
        let mut r = rng::rng_from(4);
        let a = MhaWeights::random(g, &mut r);
        let reference = MhaWeights::random(g, &mut r);
        let mut shuffled_a = a.clone();
        for h in 0..3 {
            let p = shuffled(4, &mut r);
            shuffled_a.query[h] = a.query[h].select(Axis(0), &p);
            shuffled_a.value[h] = a.value[h].select(Axis(0), &p);
        }
        let d1 = spectral_distance_matrix(&a, &reference);
        let d2 = spectral_distance_matrix(&shuffled_a, &reference);
        for (x, y) in d1.iter().zip(d2.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let a = MhaWeights::random(AttentionGeometry::new(2, 3), &mut rng::rng_from(0));
        let b = MhaWeights::random(AttentionGeometry::new(3, 2), &mut rng::rng_from(0));
        assert!(transfusion_align(&a, &b, 10).is_err());
    }
}
