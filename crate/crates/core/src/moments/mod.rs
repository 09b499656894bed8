//! Exact prior and posterior moments of `H_Ω`, the sum of a per-branch
//! summary over a branch set `Ω`, by a single post-order traversal.
//!
//! For each branch the traversal carries the directional likelihood `S`,
//! the restricted first moment `V1`, the accumulated factorial second
//! moments `V2`, and the cross-branch product moments `W`; at the root these
//! are averaged over the stationary distribution. The covariance engine
//! carries the same families for two branch sets and their intersection,
//! plus a mixed product vector.

mod cache;
mod engine;
mod tips;

use rayon::prelude::*;

pub use cache::{build_cache, BranchMomentCache};
pub use engine::{CovarianceResult, MomentResult, Workspace};
pub use tips::TipData;

pub(crate) use tips::full_mask;

use crate::error::Result;
use crate::newick::{BranchSet, Phylogeny};

/// `P(D)`, `E(H_Ω | D)` and `Var(H_Ω | D)`.
pub fn posterior_moments(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    omega: &BranchSet,
    tips: &TipData,
) -> Result<MomentResult> {
    Workspace::new().moments(phylo, cache, omega, tips, false)
}

/// `E(H_Ω)` and `Var(H_Ω)` with no data conditioning.
pub fn prior_moments(phylo: &Phylogeny, cache: &BranchMomentCache, omega: &BranchSet) -> Result<MomentResult> {
    let tips = TipData::missing(phylo.n_tips(), cache.m());
    Workspace::new().moments(phylo, cache, omega, &tips, true)
}

/// Posterior means, variances and covariance of `H_Ω1` and `H_Ω2`.
pub fn posterior_covariance(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    omega1: &BranchSet,
    omega2: &BranchSet,
    tips: &TipData,
) -> Result<CovarianceResult> {
    Workspace::new().covariance(phylo, cache, omega1, omega2, tips, false)
}

pub fn prior_covariance(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    omega1: &BranchSet,
    omega2: &BranchSet,
) -> Result<CovarianceResult> {
    let tips = TipData::missing(phylo.n_tips(), cache.m());
    Workspace::new().covariance(phylo, cache, omega1, omega2, &tips, true)
}

/// `ln P(D)` by the pruning algorithm.
pub fn log_likelihood(phylo: &Phylogeny, cache: &BranchMomentCache, tips: &TipData) -> Result<f64> {
    Workspace::new().log_likelihood(phylo, cache, tips)
}

/// Posterior moments of every column, computed in parallel. The output is
/// independent of scheduling.
pub fn per_site_moments(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    omega: &BranchSet,
    columns: &[TipData],
) -> Result<Vec<MomentResult>> {
    columns
        .par_iter()
        .enumerate()
        .map_init(Workspace::new, |ws, (i, col)| {
            ws.moments(phylo, cache, omega, col, false).map_err(|e| e.at_site(i))
        })
        .collect()
}

pub fn per_site_covariance(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    omega1: &BranchSet,
    omega2: &BranchSet,
    columns: &[TipData],
) -> Result<Vec<CovarianceResult>> {
    columns
        .par_iter()
        .enumerate()
        .map_init(Workspace::new, |ws, (i, col)| {
            ws.covariance(phylo, cache, omega1, omega2, col, false).map_err(|e| e.at_site(i))
        })
        .collect()
}

pub fn site_log_likelihoods(phylo: &Phylogeny, cache: &BranchMomentCache, columns: &[TipData]) -> Result<Vec<f64>> {
    columns
        .par_iter()
        .enumerate()
        .map_init(Workspace::new, |ws, (i, col)| ws.log_likelihood(phylo, cache, col).map_err(|e| e.at_site(i)))
        .collect()
}
