//! Removal of hidden-unit permutation symmetry.
//!
//! Every network in a population is permuted into the unit ordering of a
//! reference network. Permutations never change the function a network
//! computes; they only make corresponding units line up across the population.

mod lap;
mod perm;
mod rebasin;
mod transfusion;

pub use lap::{invert, is_permutation, solve_lap_max, solve_lap_min, Assignment};
pub use perm::{
    apply_permutation, permute_attention, AttentionPermutation, AxisBinding, PermutationAssignment, PermutationSpec,
    TensorRef,
};
pub use rebasin::{canonicalize_population, weight_match, MatchOutcome, DEFAULT_ATTENTION_ITERS, DEFAULT_MAX_ITER};
pub use transfusion::{spectral_distance_matrix, transfusion_align};
