//! Reversible continuous-time Markov chains and per-branch moment kernels.

mod config;
mod expm;
mod label;
mod model;
mod restricted;

use nalgebra::DMatrix;

pub use config::{LabelKind, ModelConfig, PairSpec, MODEL_KEYS};
pub use expm::expm;
pub use label::SummaryLabel;
pub use model::{
    build_gtr, build_reversible, build_two_state, jukes_cantor, transition_matrix, RateModel,
    ReversibleEigen,
};
pub use restricted::{branch_moments, restricted_moment_matrices, scale_phylogeny, BranchMoments};

use crate::error::{Error, Result};
use crate::newick::Phylogeny;

const NEG_FLOOR: f64 = 1e-14;

/// Zeroes negative rounding noise; negatives larger than `1e-14` relative to
/// the largest entry are an error.
pub(crate) fn clamp_nonnegative(a: &mut DMatrix<f64>, what: &'static str) -> Result<()> {
    let scale = a.amax().max(1.0);
    for x in a.iter_mut() {
        if *x < 0.0 {
            if *x < -NEG_FLOOR * scale {
                return Err(Error::NegativeEntry { what, value: *x });
            }
            *x = 0.0;
        }
    }
    Ok(())
}
