//! Weight matching: align the hidden units of one network to a reference by
//! coordinate ascent over per-layer assignment problems.

use ndarray::{Array2, Axis};

use super::lap::solve_lap_max;
use super::perm::{apply_permutation, PermutationAssignment};
use super::transfusion::transfusion_align;
use crate::nn::WeightCheckpoint;
use crate::par::{self, Execution};
use crate::rng::{self, stream};
use crate::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_ATTENTION_ITERS: usize = 10;

#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub assignment: PermutationAssignment,
    pub aligned: WeightCheckpoint,
    /// Alignment objective before the first sweep and after every sweep.
    pub objective: Vec<f64>,
    pub sweeps: usize,
}

fn weights64(c: &WeightCheckpoint) -> Vec<Array2<f64>> {
    c.dense.iter().map(|d| d.weight.mapv(f64::from)).collect()
}

/// `sum_l <W_l^ref, P_l W_l^a P_{l-1}^T>` for the current assignment.
fn objective(w_ref: &[Array2<f64>], w_a: &[Array2<f64>], perms: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for l in 0..w_ref.len() {
        let mut a = w_a[l].clone();
        if l < perms.len() {
            a = a.select(Axis(0), &perms[l]);
        }
        if l > 0 {
            a = a.select(Axis(1), &perms[l - 1]);
        }
        total += (&w_ref[l] * &a).sum();
    }
    total
}

/// Score of giving position `i` of hidden layer `h` to unit `j` of `a`,
/// holding the neighbouring permutations fixed.
fn layer_score(w_ref: &[Array2<f64>], w_a: &[Array2<f64>], perms: &[Vec<usize>], h: usize) -> Array2<f64> {
    let mut incoming = w_a[h].clone();
    if h > 0 {
        incoming = incoming.select(Axis(1), &perms[h - 1]);
    }
    let mut outgoing = w_a[h + 1].clone();
    if h + 1 < perms.len() {
        outgoing = outgoing.select(Axis(0), &perms[h + 1]);
    }
    w_ref[h].dot(&incoming.t()) + w_ref[h + 1].t().dot(&outgoing)
}

/// Align `theta_a` to `theta_ref`. `max_iter` bounds the number of full
/// sweeps over the hidden layers; a sweep that changes nothing stops early.
/// Attention blocks, when present, are aligned separately.
pub fn weight_match(theta_a: &WeightCheckpoint, theta_ref: &WeightCheckpoint, max_iter: usize) -> Result<MatchOutcome> {
    theta_a.check_same_arch(theta_ref)?;
    if max_iter == 0 {
        return Err(Error::Argument("max_iter must be >= 1".into()));
    }
    let w_ref = weights64(theta_ref);
    let w_a = weights64(theta_a);
    let mut assignment = PermutationAssignment::identity(theta_a.arch());
    let hidden = assignment.layers.len();
    let mut order: Vec<usize> = (0..hidden).collect();
    let mut order_rng = rng::split(theta_ref.meta.seed, stream::LAYER_ORDER);
    let mut trace = vec![objective(&w_ref, &w_a, &assignment.layers)];
    let mut sweeps = 0;
    while sweeps < max_iter && hidden > 0 {
        rng::shuffle(&mut order_rng, &mut order);
        let mut changed = false;
        for &h in &order {
            let score = layer_score(&w_ref, &w_a, &assignment.layers, h);
            let best = solve_lap_max(&score)?.perm;
            if best != assignment.layers[h] {
                assignment.layers[h] = best;
                changed = true;
            }
        }
        sweeps += 1;
        trace.push(objective(&w_ref, &w_a, &assignment.layers));
        if !changed {
            break;
        }
    }
    if let (Some(a), Some(r)) = (&theta_a.attention, &theta_ref.attention) {
        assignment.attention = Some(transfusion_align(a, r, DEFAULT_ATTENTION_ITERS)?.0);
    }
    let aligned = apply_permutation(theta_a, &assignment)?;
    Ok(MatchOutcome {
        assignment,
        aligned,
        objective: trace,
        sweeps,
    })
}

/// Align every member of `pop` to `pop[reference_index]`. The reference is
/// returned unchanged.
pub fn canonicalize_population(
    exec: Execution,
    pop: &[WeightCheckpoint],
    reference_index: usize,
    max_iter: usize,
) -> Result<Vec<WeightCheckpoint>> {
    let reference = pop
        .get(reference_index)
        .ok_or_else(|| Error::Argument(format!("reference index {reference_index} out of range for {} networks", pop.len())))?;
    for c in pop {
        c.check_same_arch(reference)?;
    }
    par::try_map_indexed(exec, pop.len(), |i| {
        if i == reference_index {
            Ok(reference.clone())
        } else {
            weight_match(&pop[i], reference, max_iter).map(|m| m.aligned)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::lap::invert;
    use crate::nn::{init_weights, Activation, ArchitectureSpec, InitScheme};

    fn random_layers(arch: &ArchitectureSpec, seed: u64) -> PermutationAssignment {
        let mut rng = rng::rng_from(seed);
        let mut a = PermutationAssignment::identity(arch);
        for p in &mut a.layers {
            rng::shuffle(&mut rng, p);
        }
        a
    }

    #[test]
    fn self_alignment_is_identity() {
        let arch = ArchitectureSpec::mlp(&[5, 8, 6, 3], Activation::Relu).unwrap();
        let c = init_weights(&arch, InitScheme::Kaiming, 2);
        let m = weight_match(&c, &c, 100).unwrap();
        assert!(m.assignment.is_identity());
        let norms: f64 = weights64(&c).iter().map(|w| w.iter().map(|x| x * x).sum::<f64>()).sum();
        assert!((m.objective.last().unwrap() - norms).abs() < 1e-9 * norms);
        assert_eq!(m.sweeps, 1);
    }

    #[test]
    fn recovers_inverse_of_a_known_permutation() {
        let arch = ArchitectureSpec::bn_mlp(&[6, 10, 9, 4], Activation::Relu).unwrap();
        let reference = init_weights(&arch, InitScheme::Kaiming, 5);
        let pi = random_layers(&arch, 8);
        let a = apply_permutation(&reference, &pi).unwrap();
        let m = weight_match(&a, &reference, 100).unwrap();
        for (got, p) in m.assignment.layers.iter().zip(&pi.layers) {
            assert_eq!(got, &invert(p));
        }
        assert_eq!(m.aligned, reference);
    }

    #[test]
    fn objective_never_decreases_on_unrelated_networks() {
        let arch = ArchitectureSpec::mlp(&[8, 16, 16, 16, 4], Activation::Relu).unwrap();
        for seed in 0..5 {
            let r = init_weights(&arch, InitScheme::Kaiming, seed);
            let a = init_weights(&arch, InitScheme::Kaiming, seed + 100);
            let m = weight_match(&a, &r, 100).unwrap();
            assert!(m.sweeps <= 100);
            for w in m.objective.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", m.objective);
            }
            let x = Array2::from_shape_fn((100, 8), |(i, j)| ((i * 7 + j * 3) as f64).sin());
            let before = a.forward(&x).unwrap();
            let after = m.aligned.forward(&x).unwrap();
            let diff = before.iter().zip(after.iter()).fold(0.0f64, |d, (p, q)| d.max((p - q).abs()));
            assert!(diff <= 1e-5);
        }
    }

    #[test]
    fn population_alignment() {
        let arch = ArchitectureSpec::mlp(&[4, 7, 5, 3], Activation::Relu).unwrap();
        let base = init_weights(&arch, InitScheme::Kaiming, 1);
        let pop: Vec<_> = (0..4)
            .map(|s| apply_permutation(&base, &random_layers(&arch, s)).unwrap())
            .collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let out = canonicalize_population(exec, &pop, 0, 100).unwrap();
            assert_eq!(out[0], pop[0]);
            assert!(out.iter().all(|c| c == &pop[0]));
        }
        let single = canonicalize_population(Execution::Sequential, &pop[..1], 0, 100).unwrap();
        assert_eq!(single, pop[..1].to_vec());
        let other = init_weights(&ArchitectureSpec::mlp(&[4, 6, 5, 3], Activation::Relu).unwrap(), InitScheme::Kaiming, 0);
        assert!(canonicalize_population(Execution::Sequential, &[base, other], 0, 10).is_err());
    }
}
