use crate::error::{Error, Result};
use crate::newick::{BranchSet, Phylogeny};

use super::cache::BranchMomentCache;
use super::tips::TipData;

/// Partial likelihoods are renormalized when their largest entry drops
/// below this value; the factor is tracked on the log scale.
const SCALE_THRESHOLD: f64 = 1e-100;
const VARIANCE_TOL: f64 = 1e-10;

#[inline]
fn matvec(out: &mut [f64], a: &[f64], x: &[f64]) {
    let m = out.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * m..(i + 1) * m];
        *o = row.iter().zip(x).map(|(r, v)| r * v).sum();
    }
}

#[inline]
fn matvec_add(out: &mut [f64], a: &[f64], x: &[f64], coef: f64) {
    let m = out.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * m..(i + 1) * m];
        *o += coef * row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>();
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn slot(v: &[f64], b: usize, m: usize) -> &[f64] {
    &v[b * m..(b + 1) * m]
}

#[inline]
fn slot_mut(v: &mut [f64], b: usize, m: usize) -> &mut [f64] {
    &mut v[b * m..(b + 1) * m]
}

/// Rescales the node vectors if needed; returns `Err` for zero likelihood.
fn rescale(f: &mut [f64], others: &mut [&mut [f64]], log_scale: &mut f64) -> Result<()> {
    let mx = f.iter().copied().fold(0.0, f64::max);
    if mx == 0.0 {
        return Err(Error::ImpossibleData);
    }
    if mx < SCALE_THRESHOLD {
        let inv = 1.0 / mx;
        f.iter_mut().for_each(|x| *x *= inv);
        for v in others.iter_mut() {
            v.iter_mut().for_each(|x| *x *= inv);
        }
        *log_scale += mx.ln();
    }
    Ok(())
}

fn check_inputs(phylo: &Phylogeny, cache: &BranchMomentCache, tips: &TipData, omegas: &[&BranchSet]) -> Result<()> {
    cache.check(phylo)?;
    if tips.n_tips() != phylo.n_tips() {
        return Err(Error::InvalidArgument(format!(
            "tip data cover {} tips, tree has {}",
            tips.n_tips(),
            phylo.n_tips()
        )));
    }
    if tips.m() != cache.m() {
        return Err(Error::InvalidArgument(format!(
            "tip data use {} states, model has {}",
            tips.m(),
            cache.m()
        )));
    }
    for omega in omegas {
        if omega.capacity() != phylo.n_branches() {
            return Err(Error::InvalidArgument(format!(
                "branch set sized for {} branches, tree has {}",
                omega.capacity(),
                phylo.n_branches()
            )));
        }
    }
    Ok(())
}

pub(crate) fn finish_variance(raw_second: f64, mean: f64) -> Result<f64> {
    let v = raw_second - mean * mean;
    if v >= 0.0 {
        Ok(v)
    } else if v > -VARIANCE_TOL * raw_second.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance(v))
    }
}

/// Likelihood and the first two moments of `H_Ω`, prior or posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentResult {
    /// `P(D)`; 1 for prior moments.
    pub likelihood: f64,
    /// `ln P(D)`, valid even when `likelihood` underflows.
    pub log_likelihood: f64,
    pub mean: f64,
    pub variance: f64,
    /// `E(H_Ω 1_D)`.
    pub restricted_first: f64,
    /// `E(H_Ω^2 1_D)`.
    pub restricted_second: f64,
}

/// Joint moments of `H_Ω1` and `H_Ω2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceResult {
    pub likelihood: f64,
    pub log_likelihood: f64,
    pub mean: [f64; 2],
    pub variance: [f64; 2],
    pub covariance: f64,
    /// `E(H_Ω1 H_Ω2 1_D)`.
    pub restricted_product: f64,
}

impl CovarianceResult {
    pub fn correlation(&self) -> f64 {
        self.covariance / (self.variance[0] * self.variance[1]).sqrt()
    }
}

struct RootSums {
    log_scale: f64,
    pd: f64,
}

impl RootSums {
    fn likelihood(&self, prior: bool) -> (f64, f64) {
        if prior {
            (1.0, 0.0)
        } else {
            let log = self.pd.ln() + self.log_scale;
            (log.exp(), log)
        }
    }

    fn restricted(&self, x: f64, prior: bool) -> f64 {
        if prior {
            x / self.pd
        } else {
            x * self.log_scale.exp()
        }
    }
}

/// Reusable buffers for the traversals. One workspace per thread.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    m: usize,
    // Per-branch vectors, `n_branches * m` each.
    s: Vec<f64>,
    v1: [Vec<f64>; 3],
    v2: [Vec<f64>; 3],
    w: [Vec<f64>; 3],
    // Node vectors for the node being combined.
    f: Vec<f64>,
    x1: [Vec<f64>; 3],
    x2: [Vec<f64>; 3],
    y: [Vec<f64>; 3],
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, n_branches: usize, m: usize, families: usize) {
        self.m = m;
        let len = n_branches * m;
        self.s.resize(len, 0.0);
        self.f.resize(m, 0.0);
        for k in 0..families {
            self.v1[k].resize(len, 0.0);
            self.v2[k].resize(len, 0.0);
            self.w[k].resize(len, 0.0);
            self.x1[k].resize(m, 0.0);
            self.x2[k].resize(m, 0.0);
            self.y[k].resize(m, 0.0);
        }
    }

    /// `ln P(D)` by pruning alone.
    pub fn log_likelihood(&mut self, phylo: &Phylogeny, cache: &BranchMomentCache, tips: &TipData) -> Result<f64> {
        check_inputs(phylo, cache, tips, &[])?;
        let m = cache.m();
        self.prepare(phylo.n_branches(), m, 0);
        let mut log_scale = 0.0;
        for &b in phylo.postorder() {
            let c = phylo.child_node(b);
            self.pruning_node(phylo, tips, c, &mut log_scale)?;
            matvec(slot_mut(&mut self.s, b, m), cache.p(b), &self.f);
        }
        self.pruning_node(phylo, tips, phylo.root(), &mut log_scale)?;
        let pd = dot(cache.pi(), &self.f);
        if !(pd > 0.0) {
            return Err(Error::ImpossibleData);
        }
        Ok(pd.ln() + log_scale)
    }

    fn pruning_node(&mut self, phylo: &Phylogeny, tips: &TipData, c: usize, log_scale: &mut f64) -> Result<()> {
        let m = self.m;
        match phylo.child_branches(c) {
            None => tips.write_indicator(phylo.tip_index(c).expect("leaf is a tip"), &mut self.f),
            Some([b1, b2]) => {
                let (s1, s2) = (slot(&self.s, b1, m), slot(&self.s, b2, m));
                for i in 0..m {
                    self.f[i] = s1[i] * s2[i];
                }
                rescale(&mut self.f, &mut [], log_scale)?;
            }
        }
        Ok(())
    }

    /// Single post-order pass for one branch set.
    pub fn moments(
        &mut self,
        phylo: &Phylogeny,
        cache: &BranchMomentCache,
        omega: &BranchSet,
        tips: &TipData,
        prior: bool,
    ) -> Result<MomentResult> {
        check_inputs(phylo, cache, tips, &[omega])?;
        let m = cache.m();
        self.prepare(phylo.n_branches(), m, 1);
        let mut log_scale = 0.0;
        for &b in phylo.postorder() {
            self.variance_node(phylo, tips, phylo.child_node(b), &mut log_scale)?;
            self.variance_branch(cache, b, omega.contains(b));
        }
        self.variance_node(phylo, tips, phylo.root(), &mut log_scale)?;

        let pi = cache.pi();
        let pd = dot(pi, &self.f);
        if !(pd > 0.0) {
            return Err(Error::ImpossibleData);
        }
        let first = dot(pi, &self.x1[0]);
        let mut second = dot(pi, &self.y[0]) + dot(pi, &self.x2[0]);
        if cache.factorial_second() {
            second += first;
        }
        let sums = RootSums { log_scale, pd };
        let mean = first / pd;
        let variance = finish_variance(second / pd, mean)?;
        let (likelihood, log_likelihood) = sums.likelihood(prior);
        Ok(MomentResult {
            likelihood,
            log_likelihood,
            mean,
            variance,
            restricted_first: sums.restricted(first, prior),
            restricted_second: sums.restricted(second, prior),
        })
    }

    fn variance_node(&mut self, phylo: &Phylogeny, tips: &TipData, c: usize, log_scale: &mut f64) -> Result<()> {
        let m = self.m;
        match phylo.child_branches(c) {
            None => {
                tips.write_indicator(phylo.tip_index(c).expect("leaf is a tip"), &mut self.f);
                self.x1[0].fill(0.0);
                self.x2[0].fill(0.0);
                self.y[0].fill(0.0);
            }
            Some([b1, b2]) => {
                let (s1, s2) = (slot(&self.s, b1, m), slot(&self.s, b2, m));
                let (a1, a2) = (slot(&self.v1[0], b1, m), slot(&self.v1[0], b2, m));
                let (c1, c2) = (slot(&self.v2[0], b1, m), slot(&self.v2[0], b2, m));
                let (w1, w2) = (slot(&self.w[0], b1, m), slot(&self.w[0], b2, m));
                for i in 0..m {
                    self.f[i] = s1[i] * s2[i];
                    self.x1[0][i] = a1[i] * s2[i] + a2[i] * s1[i];
                    self.x2[0][i] = c1[i] * s2[i] + c2[i] * s1[i];
                    self.y[0][i] = 2.0 * a1[i] * a2[i] + w1[i] * s2[i] + w2[i] * s1[i];
                }
                let [x1, _, _] = &mut self.x1;
                let [x2, _, _] = &mut self.x2;
                let [y, _, _] = &mut self.y;
                rescale(&mut self.f, &mut [x1, x2, y], log_scale)?;
            }
        }
        Ok(())
    }

    fn variance_branch(&mut self, cache: &BranchMomentCache, b: usize, in_omega: bool) {
        let m = self.m;
        let (p, e1, e2) = (cache.p(b), cache.e1(b), cache.e2(b));
        matvec(slot_mut(&mut self.s, b, m), p, &self.f);
        let v1 = slot_mut(&mut self.v1[0], b, m);
        matvec(v1, p, &self.x1[0]);
        if in_omega {
            matvec_add(v1, e1, &self.f, 1.0);
        }
        let v2 = slot_mut(&mut self.v2[0], b, m);
        matvec(v2, p, &self.x2[0]);
        if in_omega {
            matvec_add(v2, e2, &self.f, 1.0);
        }
        let w = slot_mut(&mut self.w[0], b, m);
        matvec(w, p, &self.y[0]);
        if in_omega {
            matvec_add(w, e1, &self.x1[0], 2.0);
        }
    }

    /// Single post-order pass for two branch sets. Families 0 and 1 belong
    /// to `Ω1` and `Ω2`; family 2 holds the intersection for `v1`, `v2` and
    /// the cross-product vector in the `w`/`y` slots.
    pub fn covariance(
        &mut self,
        phylo: &Phylogeny,
        cache: &BranchMomentCache,
        omega1: &BranchSet,
        omega2: &BranchSet,
        tips: &TipData,
        prior: bool,
    ) -> Result<CovarianceResult> {
        check_inputs(phylo, cache, tips, &[omega1, omega2])?;
        let m = cache.m();
        self.prepare(phylo.n_branches(), m, 3);
        let mut log_scale = 0.0;
        for &b in phylo.postorder() {
            self.covariance_node(phylo, tips, phylo.child_node(b), &mut log_scale)?;
            let in1 = omega1.contains(b);
            let in2 = omega2.contains(b);
            self.covariance_branch(cache, b, [in1, in2, in1 && in2]);
        }
        self.covariance_node(phylo, tips, phylo.root(), &mut log_scale)?;

        let pi = cache.pi();
        let pd = dot(pi, &self.f);
        if !(pd > 0.0) {
            return Err(Error::ImpossibleData);
        }
        let fact = cache.factorial_second();
        let sums = RootSums { log_scale, pd };
        let mut mean = [0.0; 2];
        let mut variance = [0.0; 2];
        for k in 0..2 {
            let first = dot(pi, &self.x1[k]);
            let mut second = dot(pi, &self.y[k]) + dot(pi, &self.x2[k]);
            if fact {
                second += first;
            }
            mean[k] = first / pd;
            variance[k] = finish_variance(second / pd, mean[k])?;
        }
        let mut product = dot(pi, &self.y[2]) + dot(pi, &self.x2[2]);
        if fact {
            product += dot(pi, &self.x1[2]);
        }
        let covariance = product / pd - mean[0] * mean[1];
        let (likelihood, log_likelihood) = sums.likelihood(prior);
        Ok(CovarianceResult {
            likelihood,
            log_likelihood,
            mean,
            variance,
            covariance,
            restricted_product: sums.restricted(product, prior),
        })
    }

    fn covariance_node(&mut self, phylo: &Phylogeny, tips: &TipData, c: usize, log_scale: &mut f64) -> Result<()> {
        let m = self.m;
        let Some([b1, b2]) = phylo.child_branches(c) else {
            tips.write_indicator(phylo.tip_index(c).expect("leaf is a tip"), &mut self.f);
            for k in 0..3 {
                self.x1[k].fill(0.0);
                self.x2[k].fill(0.0);
                self.y[k].fill(0.0);
            }
            return Ok(());
        };
        let (s1, s2) = (slot(&self.s, b1, m), slot(&self.s, b2, m));
        for i in 0..m {
            self.f[i] = s1[i] * s2[i];
        }
        for k in 0..3 {
            let (a1, a2) = (slot(&self.v1[k], b1, m), slot(&self.v1[k], b2, m));
            let (c1, c2) = (slot(&self.v2[k], b1, m), slot(&self.v2[k], b2, m));
            let (w1, w2) = (slot(&self.w[k], b1, m), slot(&self.w[k], b2, m));
            for i in 0..m {
                self.x1[k][i] = a1[i] * s2[i] + a2[i] * s1[i];
                self.x2[k][i] = c1[i] * s2[i] + c2[i] * s1[i];
                self.y[k][i] = w1[i] * s2[i] + w2[i] * s1[i];
            }
            if k < 2 {
                for i in 0..m {
                    self.y[k][i] += 2.0 * a1[i] * a2[i];
                }
            }
        }
        let (p1, p2) = (slot(&self.v1[0], b1, m), slot(&self.v1[0], b2, m));
        let (q1, q2) = (slot(&self.v1[1], b1, m), slot(&self.v1[1], b2, m));
        for i in 0..m {
            self.y[2][i] += p1[i] * q2[i] + p2[i] * q1[i];
        }
        let [x1a, x1b, x1c] = &mut self.x1;
        let [x2a, x2b, x2c] = &mut self.x2;
        let [ya, yb, yc] = &mut self.y;
        rescale(&mut self.f, &mut [x1a, x1b, x1c, x2a, x2b, x2c, ya, yb, yc], log_scale)
    }

    fn covariance_branch(&mut self, cache: &BranchMomentCache, b: usize, member: [bool; 3]) {
        let m = self.m;
        let (p, e1, e2) = (cache.p(b), cache.e1(b), cache.e2(b));
        matvec(slot_mut(&mut self.s, b, m), p, &self.f);
        for k in 0..3 {
            let v1 = slot_mut(&mut self.v1[k], b, m);
            matvec(v1, p, &self.x1[k]);
            if member[k] {
                matvec_add(v1, e1, &self.f, 1.0);
            }
            let v2 = slot_mut(&mut self.v2[k], b, m);
            matvec(v2, p, &self.x2[k]);
            if member[k] {
                matvec_add(v2, e2, &self.f, 1.0);
            }
        }
        for k in 0..2 {
            let w = slot_mut(&mut self.w[k], b, m);
            matvec(w, p, &self.y[k]);
            if member[k] {
                matvec_add(w, e1, &self.x1[k], 2.0);
            }
        }
        let w = slot_mut(&mut self.w[2], b, m);
        matvec(w, p, &self.y[2]);
        if member[0] {
            matvec_add(w, e1, &self.x1[1], 1.0);
        }
        if member[1] {
            matvec_add(w, e1, &self.x1[0], 1.0);
        }
    }
}
