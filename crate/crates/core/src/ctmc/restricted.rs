use nalgebra::DMatrix;

use super::expm::expm;
use super::label::SummaryLabel;
use super::model::{check_time, RateModel};
use super::{clamp_nonnegative, Phylogeny};
use crate::error::{Error, Result};
use crate::newick::BranchSet;

/// `P(t)` together with the first and second restricted moment matrices of
/// a summary over a branch of length `t`.
///
/// `e1[(i, j)] = E[h 1{X_t = j} | X_0 = i]`. For substitution counts `e2`
/// holds the factorial moment `E[h(h-1) 1{X_t = j} | X_0 = i]`; for dwelling
/// times it holds the raw moment `E[h^2 1{X_t = j} | X_0 = i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMoments {
    pub p: DMatrix<f64>,
    pub e1: DMatrix<f64>,
    pub e2: DMatrix<f64>,
}

/// Computes `P(t)`, `e1` and `e2` from one exponential of the 3m x 3m block
/// matrix `[[Q, B, 0], [0, Q, B], [0, 0, Q]]`.
pub fn branch_moments(model: &RateModel, label: &SummaryLabel, t: f64) -> Result<BranchMoments> {
    check_time(t)?;
    let m = model.m();
    let b = label.weight_matrix(model)?;
    if t == 0.0 {
        return Ok(BranchMoments {
            p: DMatrix::identity(m, m),
            e1: DMatrix::zeros(m, m),
            e2: DMatrix::zeros(m, m),
        });
    }
    let mut block = DMatrix::zeros(3 * m, 3 * m);
    for k in 0..3 {
        block.view_mut((k * m, k * m), (m, m)).copy_from(&(model.q() * t));
    }
    for k in 0..2 {
        block.view_mut((k * m, (k + 1) * m), (m, m)).copy_from(&(&b * t));
    }
    let big = expm(&block);
    let mut p = big.view((0, 0), (m, m)).into_owned();
    let mut e1 = big.view((0, m), (m, m)).into_owned();
    let mut e2 = big.view((0, 2 * m), (m, m)) * 2.0;
    clamp_nonnegative(&mut p, "transition matrix")?;
    clamp_nonnegative(&mut e1, "first restricted moment")?;
    clamp_nonnegative(&mut e2, "second restricted moment")?;
    Ok(BranchMoments { p, e1, e2 })
}

/// `(e1, e2)` for a branch of length `t`.
pub fn restricted_moment_matrices(
    model: &RateModel,
    label: &SummaryLabel,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let bm = branch_moments(model, label, t)?;
    Ok((bm.e1, bm.e2))
}

/// Applies `ψ(ρ, λ; Θ_b)`: every branch length is multiplied by `rho`, and
/// branches in `subtree` additionally by `lambda`.
pub fn scale_phylogeny(phylo: &Phylogeny, rho: f64, lambda: f64, subtree: &BranchSet) -> Result<Phylogeny> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho = {rho} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} outside [0, 1]")));
    }
    if subtree.capacity() != phylo.n_branches() {
        return Err(Error::InvalidArgument("branch set does not match the tree".into()));
    }
    if !subtree.is_downward_closed(phylo) {
        return Err(Error::NotDownwardClosed);
    }
    let lengths = (0..phylo.n_branches())
        .map(|b| {
            let t = phylo.length(b) * rho;
            if subtree.contains(b) {
                t * lambda
            } else {
                t
            }
        })
        .collect();
    phylo.with_lengths(lengths)
}
