//! Conservation tests on the expected number of substitutions.
//!
//! The statistics replace the unobserved substitution counts by their
//! posterior expectations under a neutral model:
//!
//! * `T_all = Σ_i E(H_Θ | D_i)` over the whole tree,
//! * `T_sub = Σ_i E(H_Θb | D_i)` over the subtree below branch `b`,
//! * `T_ratio = T_sub / T_all`.
//!
//! Under the null each site contributes independently, so the sums are
//! approximately normal. The *modified* nulls use the variance of the
//! conditional expectation, `Var(H) - E[Var(H | D)]`, which is the correct
//! per-site variance of the statistic; the *original*-style nulls use the
//! prior variance `Var(H)` and are deliberately conservative (normal
//! approximations only). Subtree and ratio tests are evaluated under the
//! globally rescaled model `ψ(ρ̂)` with `ρ̂` the maximum likelihood scale.
//! All p-values are lower-tail: conservation means fewer substitutions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::ctmc::{scale_phylogeny, RateModel, SummaryLabel};
use crate::error::{Error, Result};
use crate::moments::{
    build_cache, per_site_covariance, per_site_moments, prior_covariance, prior_moments, site_log_likelihoods,
    BranchMomentCache, TipData,
};
use crate::newick::{BranchSet, Phylogeny};
use crate::rng::{seeded, substream2};
use crate::seqsim::simulate_with_cache;
use crate::simmap::expected_conditional_moments;
use crate::stats::normal_cdf;

pub const DEFAULT_MC_DATASETS: usize = 1000;
const RHO_TOL: f64 = 1e-6;

/// `Σ_i E(H_Θ | D_i)`.
pub fn stat_all(columns: &[TipData], phylo: &Phylogeny, cache: &BranchMomentCache) -> Result<f64> {
    let all = BranchSet::all(phylo.n_branches());
    Ok(per_site_moments(phylo, cache, &all, columns)?.iter().map(|r| r.mean).sum())
}

/// `Σ_i E(H_Θb | D_i)`.
pub fn stat_sub(columns: &[TipData], phylo: &Phylogeny, cache: &BranchMomentCache, b: usize) -> Result<f64> {
    let sub = phylo.subtree_branches(b)?;
    Ok(per_site_moments(phylo, cache, &sub, columns)?.iter().map(|r| r.mean).sum())
}

/// `T_sub / T_all`.
pub fn stat_ratio(columns: &[TipData], phylo: &Phylogeny, cache: &BranchMomentCache, b: usize) -> Result<f64> {
    let (sub, all) = sub_and_all(columns, phylo, cache, b)?;
    if all <= 0.0 {
        return Err(Error::ZeroDenominator("subtree ratio statistic"));
    }
    Ok(sub / all)
}

fn sub_and_all(columns: &[TipData], phylo: &Phylogeny, cache: &BranchMomentCache, b: usize) -> Result<(f64, f64)> {
    let sub = phylo.subtree_branches(b)?;
    let all = BranchSet::all(phylo.n_branches());
    let res = per_site_covariance(phylo, cache, &sub, &all, columns)?;
    Ok(res.iter().fold((0.0, 0.0), |(s, a), r| (s + r.mean[0], a + r.mean[1])))
}

/// Normal null for a sum over `sites` independent columns, with the
/// per-site moments it was assembled from.
///
/// `mean = sites * prior_mean` and
/// `variance = sites * (prior_variance - expected_conditional_variance)`,
/// the second term absent for the original-style null.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    pub mean: f64,
    pub variance: f64,
    /// Monte Carlo standard error of `variance`.
    pub variance_se: f64,
    pub sites: usize,
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub expected_conditional_variance: Option<f64>,
    pub expected_conditional_variance_se: f64,
}

impl NullDistribution {
    fn build(sites: usize, prior_mean: f64, prior_variance: f64, ecv: Option<(f64, f64)>) -> Result<Self> {
        let l = sites as f64;
        let per_site = prior_variance - ecv.map_or(0.0, |e| e.0);
        let null = NullDistribution {
            mean: l * prior_mean,
            variance: l * per_site,
            variance_se: l * ecv.map_or(0.0, |e| e.1),
            sites,
            prior_mean,
            prior_variance,
            expected_conditional_variance: ecv.map(|e| e.0),
            expected_conditional_variance_se: ecv.map_or(0.0, |e| e.1),
        };
        if !(null.variance > 0.0) {
            return Err(Error::DegenerateNull(format!("null variance {:e}", null.variance)));
        }
        Ok(null)
    }

    pub fn p_value(&self, statistic: f64) -> f64 {
        normal_cdf(statistic, self.mean, self.variance.sqrt())
    }
}

/// Null of `T_all` with variance `L·Var(H_Θ) - L·E[Var(H_Θ | D)]`, the
/// expectation estimated from `m_mc` simulated columns.
pub fn null_all<R: Rng + ?Sized>(
    model: &RateModel,
    phylo: &Phylogeny,
    sites: usize,
    m_mc: usize,
    rng: &mut R,
) -> Result<NullDistribution> {
    let cache = build_cache(model, phylo, &SummaryLabel::all_substitutions(model.m()))?;
    set_null(phylo, &cache, &BranchSet::all(phylo.n_branches()), sites, Some(m_mc), rng)
}

/// Original-style null of `T_all`: `Normal(L·E(H_Θ), L·Var(H_Θ))`.
pub fn null_all_original(model: &RateModel, phylo: &Phylogeny, sites: usize) -> Result<NullDistribution> {
    let cache = build_cache(model, phylo, &SummaryLabel::all_substitutions(model.m()))?;
    set_null(phylo, &cache, &BranchSet::all(phylo.n_branches()), sites, None, &mut seeded(0))
}

fn set_null<R: Rng + ?Sized>(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    omega: &BranchSet,
    sites: usize,
    m_mc: Option<usize>,
    rng: &mut R,
) -> Result<NullDistribution> {
    if sites == 0 {
        return Err(Error::InvalidArgument("null needs at least one site".into()));
    }
    let prior = prior_moments(phylo, cache, omega)?;
    let ecv = match m_mc {
        None => None,
        Some(n) => {
            if n < 100 {
                return Err(Error::InvalidArgument(format!("{n} Monte Carlo data sets; at least 100 needed")));
            }
            let e = expected_conditional_moments(phylo, cache, omega, None, n, rng)?;
            Some((e.expected_variance[0], e.expected_variance_se[0]))
        }
    };
    NullDistribution::build(sites, prior.mean, prior.variance, ecv)
}

/// Delta-method normal null of `T_ratio`.
///
/// With per-site `E_b = E(H_Θb)`, `E = E(H_Θ)`, `r = E_b / E`, and
/// `V_b`, `V`, `C` the variances and covariance of the conditional means
/// (`Var(H) - E[Var(H | D)]`, `Cov(H_b, H) - E[Cov(H_b, H | D)]`):
/// `mean = r`, `variance = (V_b - 2rC + r²V) / (L E²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioNull {
    pub mean: f64,
    pub variance: f64,
    pub sites: usize,
    pub prior_mean: [f64; 2],
    pub prior_variance: [f64; 2],
    pub prior_covariance: f64,
    pub expected_conditional_variance: [f64; 2],
    pub expected_conditional_covariance: f64,
}

impl RatioNull {
    fn build(
        sites: usize,
        prior_mean: [f64; 2],
        prior_variance: [f64; 2],
        prior_covariance: f64,
        ecv: [f64; 2],
        ecc: f64,
    ) -> Result<Self> {
        if !(prior_mean[1] > 0.0) {
            return Err(Error::DegenerateNull("zero expected substitutions".into()));
        }
        let r = prior_mean[0] / prior_mean[1];
        let vb = prior_variance[0] - ecv[0];
        let v = prior_variance[1] - ecv[1];
        let c = prior_covariance - ecc;
        let variance = (vb - 2.0 * r * c + r * r * v) / (sites as f64 * prior_mean[1] * prior_mean[1]);
        if !(variance > 0.0) {
            return Err(Error::DegenerateNull(format!("ratio null variance {variance:e}")));
        }
        Ok(RatioNull {
            mean: r,
            variance,
            sites,
            prior_mean,
            prior_variance,
            prior_covariance,
            expected_conditional_variance: ecv,
            expected_conditional_covariance: ecc,
        })
    }
}

/// Maximum likelihood `ρ` in `[0, 1]` for the globally rescaled model,
/// by golden-section search (tolerance `1e-6`) with both endpoints checked.
pub fn estimate_rho(columns: &[TipData], phylo: &Phylogeny, model: &RateModel) -> Result<f64> {
    if columns.is_empty() {
        return Err(Error::InvalidArgument("cannot estimate rho from an empty alignment".into()));
    }
    let mut patterns: Vec<TipData> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for col in columns {
        match index.get(col) {
            Some(&k) => weights[k] += 1.0,
            None => {
                index.insert(col.clone(), patterns.len());
                patterns.push(col.clone());
                weights.push(1.0);
            }
        }
    }
    let none = BranchSet::empty(phylo.n_branches());
    let loglik = |rho: f64| -> Result<f64> {
        let scaled = scale_phylogeny(phylo, rho, 1.0, &none)?;
        let cache = BranchMomentCache::transitions_only(model, &scaled)?;
        match site_log_likelihoods(&scaled, &cache, &patterns) {
            Ok(ll) => Ok(ll.iter().zip(&weights).map(|(l, w)| l * w).sum()),
            Err(Error::Site { source, .. }) if matches!(*source, Error::ImpossibleData) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    };
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = loglik(c)?;
    let mut fd = loglik(d)?;
    while b - a > RHO_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = loglik(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = loglik(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, loglik(mid)?);
    for x in [0.0, 1.0] {
        let f = loglik(x)?;
        if f > best.1 {
            best = (x, f);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    AllOriginal,
    AllModified,
    SubMarginalOriginal,
    SubMarginalModified,
    SubConditionalOriginal,
    RatioModified,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::AllOriginal,
        Variant::AllModified,
        Variant::SubMarginalOriginal,
        Variant::SubMarginalModified,
        Variant::SubConditionalOriginal,
        Variant::RatioModified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::AllOriginal => "all_original",
            Variant::AllModified => "all_modified",
            Variant::SubMarginalOriginal => "sub_marginal_original",
            Variant::SubMarginalModified => "sub_marginal_modified",
            Variant::SubConditionalOriginal => "sub_conditional_original",
            Variant::RatioModified => "ratio_modified",
        }
    }

    pub fn needs_subtree(self) -> bool {
        !matches!(self, Variant::AllOriginal | Variant::AllModified)
    }

    /// Original-style variants use normal approximations of an
    /// overdispersed null.
    pub fn is_approximation(self) -> bool {
        matches!(self, Variant::AllOriginal | Variant::SubMarginalOriginal | Variant::SubConditionalOriginal)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown test variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub variant: Variant,
    pub statistic: f64,
    pub p_value: f64,
    pub null_mean: f64,
    pub null_variance: f64,
    pub rho_hat: Option<f64>,
}

/// Runs one conservation test on `columns` (in the tree's tip order).
/// `b` is required for subtree and ratio variants.
#[allow(clippy::too_many_arguments)]
pub fn test_conservation<R: Rng + ?Sized>(
    columns: &[TipData],
    phylo: &Phylogeny,
    model: &RateModel,
    b: Option<usize>,
    variant: Variant,
    m_mc: usize,
    rng: &mut R,
) -> Result<TestResult> {
    if variant.needs_subtree() {
        let b = b.ok_or_else(|| Error::InvalidArgument(format!("{variant} needs a subtree branch")))?;
        let mut out = subtree_tests(columns, phylo, model, b, &[variant], m_mc, rng)?;
        return out.pop().expect("one variant requested");
    }
    let cache = build_cache(model, phylo, &SummaryLabel::all_substitutions(model.m()))?;
    let omega = BranchSet::all(phylo.n_branches());
    let m_mc = (variant == Variant::AllModified).then_some(m_mc);
    let null = set_null(phylo, &cache, &omega, columns.len(), m_mc, rng)?;
    let statistic = stat_all(columns, phylo, &cache)?;
    Ok(all_branch_result(variant, statistic, &null))
}

fn all_branch_result(variant: Variant, statistic: f64, null: &NullDistribution) -> TestResult {
    TestResult {
        variant,
        statistic,
        p_value: null.p_value(statistic),
        null_mean: null.mean,
        null_variance: null.variance,
        rho_hat: None,
    }
}

/// Subtree and ratio tests sharing one `ρ̂` and one set of moments under
/// `ψ(ρ̂)`. Each entry fails independently (e.g. a degenerate null).
pub fn subtree_tests<R: Rng + ?Sized>(
    columns: &[TipData],
    phylo: &Phylogeny,
    model: &RateModel,
    b: usize,
    variants: &[Variant],
    m_mc: usize,
    rng: &mut R,
) -> Result<Vec<Result<TestResult>>> {
    let sub = phylo.subtree_branches(b)?;
    if columns.is_empty() {
        return Err(Error::InvalidArgument("empty alignment".into()));
    }
    let rho = estimate_rho(columns, phylo, model)?;
    let scaled = scale_phylogeny(phylo, rho, 1.0, &BranchSet::empty(phylo.n_branches()))?;
    let cache = build_cache(model, &scaled, &SummaryLabel::all_substitutions(model.m()))?;
    let all = BranchSet::all(phylo.n_branches());
    let l = columns.len();
    let prior = prior_covariance(&scaled, &cache, &sub, &all)?;
    let (t_sub, t_all) = sub_and_all(columns, &scaled, &cache, b)?;
    let needs_mc = variants.iter().any(|v| matches!(v, Variant::SubMarginalModified | Variant::RatioModified));
    let cond = if needs_mc && m_mc >= 100 {
        Some(expected_conditional_moments(&scaled, &cache, &sub, Some(&all), m_mc, rng)?)
    } else if needs_mc {
        return Err(Error::InvalidArgument(format!("{m_mc} Monte Carlo data sets; at least 100 needed")));
    } else {
        None
    };

    let result = |variant: Variant, statistic: f64, mean: f64, variance: f64| -> Result<TestResult> {
        if !(variance > 0.0) {
            return Err(Error::DegenerateNull(format!("{variant}: null variance {variance:e}")));
        }
        Ok(TestResult {
            variant,
            statistic,
            p_value: normal_cdf(statistic, mean, variance.sqrt()),
            null_mean: mean,
            null_variance: variance,
            rho_hat: Some(rho),
        })
    };
    let out = variants
        .iter()
        .map(|&v| match v {
            Variant::SubMarginalOriginal => {
                let null = NullDistribution::build(l, prior.mean[0], prior.variance[0], None)?;
                result(v, t_sub, null.mean, null.variance)
            }
            Variant::SubMarginalModified => {
                let c = cond.as_ref().expect("computed above");
                let ecv = (c.expected_variance[0], c.expected_variance_se[0]);
                let null = NullDistribution::build(l, prior.mean[0], prior.variance[0], Some(ecv))?;
                result(v, t_sub, null.mean, null.variance)
            }
            Variant::SubConditionalOriginal => {
                let lf = l as f64;
                if !(prior.variance[1] > 0.0) {
                    return Err(Error::DegenerateNull("zero prior variance".into()));
                }
                let beta = prior.covariance / prior.variance[1];
                let mean = lf * prior.mean[0] + beta * (t_all - lf * prior.mean[1]);
                let variance = lf * (prior.variance[0] - prior.covariance * beta);
                result(v, t_sub, mean, variance)
            }
            Variant::RatioModified => {
                let c = cond.as_ref().expect("computed above");
                if t_all <= 0.0 {
                    return Err(Error::ZeroDenominator("subtree ratio statistic"));
                }
                let null = RatioNull::build(
                    l,
                    prior.mean,
                    prior.variance,
                    prior.covariance,
                    c.expected_variance,
                    c.expected_covariance,
                )?;
                result(v, t_sub / t_all, null.mean, null.variance)
            }
            Variant::AllOriginal | Variant::AllModified => {
                Err(Error::InvalidArgument(format!("{v} is not a subtree test")))
            }
        })
        .collect();
    Ok(out)
}

/// One cell of a power / false-positive study.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPoint {
    pub sites: usize,
    pub rho: f64,
    pub lambda: f64,
    pub variants: Vec<Variant>,
    /// `p_values[v][k]` for variant `v` and replicate `k`. Degenerate nulls
    /// (e.g. `ρ̂ = 0`) are recorded as `p = 1`.
    pub p_values: Vec<Vec<f64>>,
    pub degenerate: Vec<usize>,
}

impl PowerPoint {
    /// Fraction of p-values at or below each threshold.
    pub fn power_curve(&self, variant: usize, thresholds: &[f64]) -> Vec<f64> {
        power_curve(&self.p_values[variant], thresholds)
    }
}

pub fn power_curve(p_values: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let n = p_values.len() as f64;
    thresholds.iter().map(|&a| p_values.iter().filter(|&&p| p <= a).count() as f64 / n).collect()
}

/// Settings shared by all cells of a power study.
#[derive(Debug, Clone)]
pub struct PowerSettings {
    pub subtree_branch: Option<usize>,
    pub variants: Vec<Variant>,
    pub reps: usize,
    pub m_mc: usize,
    pub seed: u64,
}

/// Simulates `reps` alignments of `sites` columns under `ψ(ρ, λ; Θ_b)` and
/// runs each selected test on each. Replicate `k` of cell `cell` uses its own
/// substream, so results do not depend on the thread count.
pub fn power_point(
    phylo: &Phylogeny,
    model: &RateModel,
    sites: usize,
    rho: f64,
    lambda: f64,
    settings: &PowerSettings,
    cell: u64,
) -> Result<PowerPoint> {
    if settings.reps < 2 {
        return Err(Error::InvalidArgument("at least 2 replicates are needed".into()));
    }
    let nb = phylo.n_branches();
    let sub = match settings.subtree_branch {
        Some(b) => phylo.subtree_branches(b)?,
        None => BranchSet::empty(nb),
    };
    if settings.variants.iter().any(|v| v.needs_subtree()) && settings.subtree_branch.is_none() {
        return Err(Error::InvalidArgument("subtree variants need a subtree branch".into()));
    }
    let sim_tree = scale_phylogeny(phylo, rho, if sub.is_empty() { 1.0 } else { lambda }, &sub)?;
    let label = SummaryLabel::all_substitutions(model.m());
    let sim_cache = build_cache(model, &sim_tree, &label)?;
    let neutral_cache = build_cache(model, phylo, &label)?;
    let all = BranchSet::all(nb);

    let mut null_rng = substream2(settings.seed, cell, u64::MAX);
    let null_orig = set_null(phylo, &neutral_cache, &all, sites, None, &mut null_rng);
    let null_mod = if settings.variants.contains(&Variant::AllModified) {
        Some(set_null(phylo, &neutral_cache, &all, sites, Some(settings.m_mc), &mut null_rng)?)
    } else {
        None
    };
    let null_orig = null_orig?;
    let sub_variants: Vec<Variant> = settings.variants.iter().copied().filter(|v| v.needs_subtree()).collect();

    let per_rep: Vec<Vec<Option<f64>>> = (0..settings.reps)
        .into_par_iter()
        .map(|k| -> Result<Vec<Option<f64>>> {
            let mut rng = substream2(settings.seed, cell, k as u64);
            let aln = simulate_with_cache(&sim_tree, &sim_cache, sites, &mut rng)?;
            let cols = aln.columns();
            let needs_all = settings.variants.iter().any(|v| !v.needs_subtree());
            let t_all = if needs_all { stat_all(cols, phylo, &neutral_cache)? } else { 0.0 };
            let sub_results = if sub_variants.is_empty() {
                Vec::new()
            } else {
                let b = settings.subtree_branch.expect("checked above");
                subtree_tests(cols, phylo, model, b, &sub_variants, settings.m_mc, &mut rng)?
            };
            let mut sub_iter = sub_results.into_iter();
            settings
                .variants
                .iter()
                .map(|v| match v {
                    Variant::AllOriginal => Ok(Some(null_orig.p_value(t_all))),
                    Variant::AllModified => Ok(Some(null_mod.as_ref().expect("built above").p_value(t_all))),
                    _ => match sub_iter.next().expect("one result per subtree variant") {
                        Ok(r) => Ok(Some(r.p_value)),
                        Err(Error::DegenerateNull(_)) | Err(Error::ZeroDenominator(_)) => Ok(None),
                        Err(e) => Err(e),
                    },
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let nv = settings.variants.len();
    let p_values = (0..nv).map(|v| per_rep.iter().map(|r| r[v].unwrap_or(1.0)).collect()).collect();
    let degenerate = (0..nv).map(|v| per_rep.iter().filter(|r| r[v].is_none()).count()).collect();
    Ok(PowerPoint { sites, rho, lambda, variants: settings.variants.clone(), p_values, degenerate })
}

/// Runs [`power_point`] over the Cartesian grid of site counts, `ρ` and `λ`.
pub fn power_simulation(
    phylo: &Phylogeny,
    model: &RateModel,
    sites: &[usize],
    rhos: &[f64],
    lambdas: &[f64],
    settings: &PowerSettings,
) -> Result<Vec<PowerPoint>> {
    let mut out = Vec::new();
    let mut cell = 0u64;
    for &l in sites {
        for &rho in rhos {
            for &lambda in lambdas {
                out.push(power_point(phylo, model, l, rho, lambda, settings, cell)?);
                cell += 1;
            }
        }
    }
    Ok(out)
}
