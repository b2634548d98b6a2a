//! Energy functions for continuous and discrete Boltzmann targets
//! `pi(x) ∝ exp(-beta V(x))`, plus exact enumeration of small discrete models.

mod continuous;
mod discrete;

pub use continuous::{clip_norm, ContinuousKind, ContinuousTarget};
pub use discrete::{
    cut_size, enumerate_exact, exact_interpolant, index_to_state, lattice_edges, log_sum_exp, maxcut_brute,
    random_graph, state_to_index, DiscreteKind, DiscreteTarget, ExactDistribution, ENUMERATION_LIMIT,
    MAXCUT_MAX_VERTICES,
};
