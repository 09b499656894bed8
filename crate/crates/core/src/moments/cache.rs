use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ctmc::{branch_moments, BranchMoments, RateModel, SummaryLabel};
use crate::error::{Error, Result};
use crate::newick::Phylogeny;

const ROW_SUM_TOL: f64 = 1e-10;

/// Per-branch `P(t_b)`, `e1(h, t_b)`, `e2(h, t_b)` plus the root
/// distribution, stored as flat row-major blocks for the traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMomentCache {
    m: usize,
    n_branches: usize,
    p: Vec<f64>,
    e1: Vec<f64>,
    e2: Vec<f64>,
    pi: Vec<f64>,
    factorial_second: bool,
}

impl BranchMomentCache {
    /// Assembles a cache from externally computed per-branch matrices.
    ///
    /// With `factorial_second`, `e2` is read as a factorial moment and the
    /// first moment is added back when forming raw second moments (the
    /// substitution-count convention); otherwise `e2` is already raw.
    pub fn from_branch_moments(pi: Vec<f64>, factorial_second: bool, branches: Vec<BranchMoments>) -> Result<Self> {
        let m = pi.len();
        if m < 2 {
            return Err(Error::InvalidModel("root distribution needs at least 2 states".into()));
        }
        if pi.iter().any(|&x| !(x >= 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidModel("root distribution is not a probability vector".into()));
        }
        if branches.is_empty() {
            return Err(Error::InvalidArgument("no branches".into()));
        }
        let n_branches = branches.len();
        let mut p = Vec::with_capacity(n_branches * m * m);
        let mut e1 = Vec::with_capacity(n_branches * m * m);
        let mut e2 = Vec::with_capacity(n_branches * m * m);
        for (b, bm) in branches.iter().enumerate() {
            for (name, mat) in [("P", &bm.p), ("e1", &bm.e1), ("e2", &bm.e2)] {
                if mat.nrows() != m || mat.ncols() != m {
                    return Err(Error::InvalidArgument(format!("branch {b}: {name} is not {m}x{m}")));
                }
                if mat.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument(format!("branch {b}: {name} has non-finite entries")));
                }
            }
            for i in 0..m {
                let row = bm.p.row(i).sum();
                if (row - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidArgument(format!("branch {b}: P row {i} sums to {row}")));
                }
            }
            if bm.p.iter().chain(bm.e1.iter()).any(|&x| x < 0.0) || (factorial_second && bm.e2.iter().any(|&x| x < 0.0)) {
                return Err(Error::NegativeEntry { what: "branch moment matrix", value: -1.0 });
            }
            push_row_major(&mut p, &bm.p);
            push_row_major(&mut e1, &bm.e1);
            push_row_major(&mut e2, &bm.e2);
        }
        Ok(BranchMomentCache { m, n_branches, p, e1, e2, pi, factorial_second })
    }

    /// Cache with only transition matrices (moment slots zero), enough for
    /// likelihoods and sampling.
    pub fn transitions_only(model: &RateModel, phylo: &Phylogeny) -> Result<Self> {
        let m = model.m();
        let per_branch: Vec<DMatrix<f64>> = (0..phylo.n_branches())
            .into_par_iter()
            .map(|b| model.transition_matrix(phylo.length(b)))
            .collect::<Result<_>>()?;
        let mut p = Vec::with_capacity(per_branch.len() * m * m);
        for mat in &per_branch {
            push_row_major(&mut p, mat);
        }
        let zeros = vec![0.0; p.len()];
        Ok(BranchMomentCache {
            m,
            n_branches: phylo.n_branches(),
            p,
            e1: zeros.clone(),
            e2: zeros,
            pi: model.pi().iter().copied().collect(),
            factorial_second: true,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_branches(&self) -> usize {
        self.n_branches
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn factorial_second(&self) -> bool {
        self.factorial_second
    }

    /// Row-major `P(t_b)`.
    pub fn p(&self, b: usize) -> &[f64] {
        let k = self.m * self.m;
        &self.p[b * k..(b + 1) * k]
    }

    pub fn e1(&self, b: usize) -> &[f64] {
        let k = self.m * self.m;
        &self.e1[b * k..(b + 1) * k]
    }

    pub fn e2(&self, b: usize) -> &[f64] {
        let k = self.m * self.m;
        &self.e2[b * k..(b + 1) * k]
    }

    pub fn branch(&self, b: usize) -> BranchMoments {
        let m = self.m;
        BranchMoments {
            p: DMatrix::from_row_slice(m, m, self.p(b)),
            e1: DMatrix::from_row_slice(m, m, self.e1(b)),
            e2: DMatrix::from_row_slice(m, m, self.e2(b)),
        }
    }

    pub(crate) fn check(&self, phylo: &Phylogeny) -> Result<()> {
        if self.n_branches != phylo.n_branches() {
            return Err(Error::InvalidArgument(format!(
                "cache has {} branches, tree has {}",
                self.n_branches,
                phylo.n_branches()
            )));
        }
        Ok(())
    }
}

fn push_row_major(out: &mut Vec<f64>, mat: &DMatrix<f64>) {
    for i in 0..mat.nrows() {
        out.extend(mat.row(i).iter());
    }
}

/// Computes the per-branch triples for `label` on every branch of `phylo`.
pub fn build_cache(model: &RateModel, phylo: &Phylogeny, label: &SummaryLabel) -> Result<BranchMomentCache> {
    label.validate(model.m())?;
    let branches: Vec<BranchMoments> = (0..phylo.n_branches())
        .into_par_iter()
        .map(|b| branch_moments(model, label, phylo.length(b)))
        .collect::<Result<_>>()?;
    BranchMomentCache::from_branch_moments(model.pi().iter().copied().collect(), label.is_count(), branches)
}
