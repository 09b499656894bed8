//! Posterior predictive checks for across-site rate variation.
//!
//! For each posterior draw `θ*` a replicate alignment is simulated with the
//! observed length, and a discrepancy is evaluated on both the observed and
//! the replicate data under `θ*`. The discrepancies use the exact posterior
//! moments of the total substitution count per site:
//!
//! * `T_var = Σ_i Var(H | D_i)`
//! * `T_disp = T_var / Σ_i E(H | D_i)`
//!
//! The posterior predictive p-value is the fraction of draws where the
//! replicate discrepancy strictly exceeds the observed one.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::ctmc::{build_gtr, RateModel, SummaryLabel};
use crate::error::{Error, Result};
use crate::moments::{build_cache, per_site_moments, BranchMomentCache, MomentResult, TipData};
use crate::newick::{parse_newick, BranchSet, Phylogeny};
use crate::rng::substream;
use crate::seqsim::{simulate_with_cache, Alignment};
use crate::simmap::mc_moments;

/// One posterior draw of tree, branch lengths and GTR parameters.
#[derive(Debug, Clone)]
pub struct PosteriorSample {
    pub tree: Phylogeny,
    pub exchangeabilities: [f64; 6],
    pub base_freqs: [f64; 4],
    pub model: RateModel,
}

impl PosteriorSample {
    /// Builds the normalized GTR model for the draw.
    pub fn new(tree: Phylogeny, exchangeabilities: [f64; 6], base_freqs: [f64; 4]) -> Result<Self> {
        let model = build_gtr(&exchangeabilities, &base_freqs, true)?;
        Ok(PosteriorSample { tree, exchangeabilities, base_freqs, model })
    }
}

/// Parses posterior draws: one tab-separated row per draw holding a Newick
/// tree, six exchangeabilities (AC AG AT CG CT GT) and four base
/// frequencies (A C G T). Blank lines, `#` comments and a header row whose
/// first field is `tree` are skipped.
pub fn parse_posterior(text: &str) -> Result<Vec<PosteriorSample>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields[0].eq_ignore_ascii_case("tree") {
            continue;
        }
        if fields.len() != 11 {
            return Err(Error::PosteriorFile { line: line_no, msg: format!("expected 11 fields, found {}", fields.len()) });
        }
        let err = |msg: String| Error::PosteriorFile { line: line_no, msg };
        let tree = parse_newick(fields[0]).map_err(|e| err(e.to_string()))?;
        let nums = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("`{f}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        let mut r = [0.0; 6];
        let mut pi = [0.0; 4];
        r.copy_from_slice(&nums[..6]);
        pi.copy_from_slice(&nums[6..]);
        out.push(PosteriorSample::new(tree, r, pi).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn read_posterior(path: &Path) -> Result<Vec<PosteriorSample>> {
    parse_posterior(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Formats draws in the layout read by [`parse_posterior`].
pub fn format_posterior(samples: &[PosteriorSample]) -> String {
    let mut out = String::from("tree\trAC\trAG\trAT\trCG\trCT\trGT\tpiA\tpiC\tpiG\tpiT\n");
    for s in samples {
        out.push_str(&s.tree.to_newick());
        for x in s.exchangeabilities.iter().chain(&s.base_freqs) {
            out.push('\t');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Discrepancy {
    TVar,
    TDisp,
}

impl Discrepancy {
    pub fn name(self) -> &'static str {
        match self {
            Discrepancy::TVar => "tvar",
            Discrepancy::TDisp => "tdisp",
        }
    }

    fn evaluate(self, results: &[MomentResult]) -> Result<f64> {
        let var: f64 = results.iter().map(|r| r.variance).sum();
        match self {
            Discrepancy::TVar => Ok(var),
            Discrepancy::TDisp => {
                let mean: f64 = results.iter().map(|r| r.mean).sum();
                if mean <= 0.0 {
                    return Err(Error::ZeroDenominator("dispersion index"));
                }
                Ok(var / mean)
            }
        }
    }
}

impl FromStr for Discrepancy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tvar" | "var" => Ok(Discrepancy::TVar),
            "tdisp" | "disp" => Ok(Discrepancy::TDisp),
            other => Err(Error::InvalidArgument(format!("unknown discrepancy `{other}`"))),
        }
    }
}

fn total_count_moments(columns: &[TipData], phylo: &Phylogeny, cache: &BranchMomentCache) -> Result<Vec<MomentResult>> {
    per_site_moments(phylo, cache, &BranchSet::all(phylo.n_branches()), columns)
}

/// `Σ_i Var(H_Θ | D_i)` for the total substitution count. `cache` must hold
/// the all-substitutions label.
pub fn t_var(columns: &[TipData], phylo: &Phylogeny, cache: &BranchMomentCache) -> Result<f64> {
    Discrepancy::TVar.evaluate(&total_count_moments(columns, phylo, cache)?)
}

/// `Σ_i Var(H_Θ | D_i) / Σ_i E(H_Θ | D_i)`.
pub fn t_disp(columns: &[TipData], phylo: &Phylogeny, cache: &BranchMomentCache) -> Result<f64> {
    Discrepancy::TDisp.evaluate(&total_count_moments(columns, phylo, cache)?)
}

/// `T_var` estimated by stochastic mapping with `reps` mappings per site,
/// with its standard error.
pub fn t_var_monte_carlo<R: Rng + ?Sized>(
    columns: &[TipData],
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    model: &RateModel,
    reps: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let label = SummaryLabel::all_substitutions(model.m());
    let omega = BranchSet::all(phylo.n_branches());
    let (mut total, mut var_se) = (0.0, 0.0);
    for (i, col) in columns.iter().enumerate() {
        let est = mc_moments(phylo, cache, model, &omega, col, &label, reps, rng).map_err(|e| e.at_site(i))?;
        total += est.variance;
        var_se += est.variance_se * est.variance_se;
    }
    Ok((total, var_se.sqrt()))
}

/// Observed and replicate discrepancy series and the resulting p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct PpredReport {
    pub n: usize,
    pub discrepancies: Vec<Discrepancy>,
    /// `t_obs[d][i]`: discrepancy `d` on the observed data under draw `i`.
    pub t_obs: Vec<Vec<f64>>,
    pub t_rep: Vec<Vec<f64>>,
    pub ppp: Vec<f64>,
}

/// Fraction of draws with `rep > obs` (ties count as not exceeding).
pub fn ppp_from_series(obs: &[f64], rep: &[f64]) -> f64 {
    assert_eq!(obs.len(), rep.len());
    let hits = obs.iter().zip(rep).filter(|(o, r)| r > o).count();
    hits as f64 / obs.len() as f64
}

/// Runs the posterior predictive procedure on the first `n` posterior draws.
/// Draw `i` simulates its replicate from stream `i` of a seed taken from
/// `rng`, so the report does not depend on the thread count.
pub fn run_ppred<R: Rng + ?Sized>(
    observed: &Alignment,
    posterior: &[PosteriorSample],
    discrepancies: &[Discrepancy],
    n: usize,
    rng: &mut R,
) -> Result<PpredReport> {
    if n == 0 || n > posterior.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {n} replicates from {} posterior draws",
            posterior.len()
        )));
    }
    if discrepancies.is_empty() {
        return Err(Error::InvalidArgument("no discrepancy selected".into()));
    }
    let seed: u64 = rng.random();
    let per_draw: Vec<(Vec<f64>, Vec<f64>)> = posterior[..n]
        .par_iter()
        .enumerate()
        .map(|(i, draw)| {
            let label = SummaryLabel::all_substitutions(draw.model.m());
            let cache = build_cache(&draw.model, &draw.tree, &label)?;
            let obs = observed.for_tree(&draw.tree)?;
            let mut r = substream(seed, i as u64);
            let rep = simulate_with_cache(&draw.tree, &cache, obs.len(), &mut r)?;
            let obs_m = total_count_moments(obs.columns(), &draw.tree, &cache)?;
            let rep_m = total_count_moments(rep.columns(), &draw.tree, &cache)?;
            let o = discrepancies.iter().map(|d| d.evaluate(&obs_m)).collect::<Result<Vec<_>>>()?;
            let p = discrepancies.iter().map(|d| d.evaluate(&rep_m)).collect::<Result<Vec<_>>>()?;
            Ok((o, p))
        })
        .collect::<Result<_>>()?;
    let nd = discrepancies.len();
    let t_obs: Vec<Vec<f64>> = (0..nd).map(|d| per_draw.iter().map(|x| x.0[d]).collect()).collect();
    let t_rep: Vec<Vec<f64>> = (0..nd).map(|d| per_draw.iter().map(|x| x.1[d]).collect()).collect();
    let ppp = (0..nd).map(|d| ppp_from_series(&t_obs[d], &t_rep[d])).collect();
    Ok(PpredReport { n, discrepancies: discrepancies.to_vec(), t_obs, t_rep, ppp })
}
