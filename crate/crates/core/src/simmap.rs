//! Simulation-based stochastic mapping.
//!
//! Internal states are drawn from their joint conditional distribution given
//! the tips (upward pruning, then downward sampling), and each branch history
//! is drawn from the endpoint-conditioned chain by uniformization. These
//! Monte Carlo estimates serve as an independent check on the exact moments.

use rand::Rng;
use rayon::prelude::*;

use crate::ctmc::{RateModel, SummaryLabel};
use crate::error::{Error, Result};
use crate::moments::{BranchMomentCache, TipData, Workspace};
use crate::newick::{BranchSet, Phylogeny};
use crate::rng::substream;
use crate::seqsim::simulate_node_states;
use crate::stats::{sample_covariance, sample_moments, SampleMoments};

const POISSON_TAIL: f64 = 1e-16;
const BLOCK: usize = 256;

fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// One endpoint-conditioned history on a branch: the start state and the
/// `(time, new state)` jumps in increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPath {
    pub start: usize,
    pub events: Vec<(f64, usize)>,
}

impl BranchPath {
    pub fn end(&self) -> usize {
        self.events.last().map_or(self.start, |e| e.1)
    }

    pub fn n_jumps(&self) -> usize {
        self.events.len()
    }

    /// Value of `label` along this path on a branch of length `t`.
    pub fn summary(&self, label: &SummaryLabel, t: f64) -> f64 {
        let mut h = 0.0;
        let mut state = self.start;
        let mut last = 0.0;
        for &(time, next) in &self.events {
            h += label.jump_weight(state, next) + label.dwell_weight(state) * (time - last);
            state = next;
            last = time;
        }
        h + label.dwell_weight(state) * (t - last)
    }
}

/// Summary weights laid out for fast path evaluation.
#[derive(Debug, Clone)]
struct LabelWeights {
    m: usize,
    jump: Vec<f64>,
    dwell: Vec<f64>,
}

impl LabelWeights {
    fn new(label: &SummaryLabel, m: usize) -> Result<Self> {
        label.validate(m)?;
        let mut jump = vec![0.0; m * m];
        let mut dwell = vec![0.0; m];
        for i in 0..m {
            dwell[i] = label.dwell_weight(i);
            for j in 0..m {
                jump[i * m + j] = label.jump_weight(i, j);
            }
        }
        Ok(LabelWeights { m, jump, dwell })
    }
}

/// Endpoint-conditioned path sampler by uniformization.
///
/// With `μ = max_i |q_ii|` and `R = I + Q/μ`, the number of candidate jumps
/// on `[0, t)` given the endpoints has mass proportional to
/// `Pois(n; μt) (R^n)_ij`; jump times are uniform order statistics and the
/// intermediate states form a discrete bridge. Self-transitions are dropped.
#[derive(Debug, Clone)]
pub struct BridgeSampler {
    m: usize,
    mu: f64,
    r: Vec<f64>,
    powers: Vec<Vec<f64>>,
    max_time: f64,
}

fn poisson_cutoff(lambda: f64) -> usize {
    (lambda + 12.0 * lambda.sqrt() + 30.0).ceil() as usize
}

fn matmul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik != 0.0 {
                for j in 0..m {
                    out[i * m + j] += aik * b[k * m + j];
                }
            }
        }
    }
    out
}

impl BridgeSampler {
    /// Prepares matrix powers sufficient for branches up to `max_time`.
    pub fn new(model: &RateModel, max_time: f64) -> Self {
        let m = model.m();
        let mu = model.max_exit_rate().max(f64::MIN_POSITIVE);
        let mut r = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                r[i * m + j] = model.q()[(i, j)] / mu + if i == j { 1.0 } else { 0.0 };
            }
        }
        let kmax = poisson_cutoff(mu * max_time.max(0.0));
        let mut powers = Vec::with_capacity(kmax + 1);
        let mut id = vec![0.0; m * m];
        for i in 0..m {
            id[i * m + i] = 1.0;
        }
        powers.push(id);
        for k in 1..=kmax {
            let next = matmul(&powers[k - 1], &r, m);
            powers.push(next);
        }
        BridgeSampler { m, mu, r, powers, max_time }
    }

    pub fn uniformization_rate(&self) -> f64 {
        self.mu
    }

    /// Draws a path from `i` to `j` over `[0, t)`.
    pub fn sample<R: Rng + ?Sized>(&self, i: usize, j: usize, t: f64, rng: &mut R) -> Result<BranchPath> {
        let m = self.m;
        if i >= m || j >= m {
            return Err(Error::InvalidArgument(format!("state outside 0..{m}")));
        }
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("branch length {t}")));
        }
        if t > self.max_time * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "branch length {t} exceeds the sampler's prepared range {}",
                self.max_time
            )));
        }
        if t == 0.0 {
            return if i == j {
                Ok(BranchPath { start: i, events: Vec::new() })
            } else {
                Err(Error::ImpossibleData)
            };
        }
        let lambda = self.mu * t;
        let kmax = poisson_cutoff(lambda).min(self.powers.len() - 1);
        let log_lambda = lambda.ln();
        let mut log_fact = 0.0;
        let mut weights = Vec::with_capacity(kmax + 1);
        let mut total = 0.0;
        for n in 0..=kmax {
            if n > 0 {
                log_fact += (n as f64).ln();
            }
            let pois = (-lambda + n as f64 * log_lambda - log_fact).exp();
            let w = pois * self.powers[n][i * m + j];
            weights.push(w);
            total += w;
            if n as f64 > lambda && pois < POISSON_TAIL && total > 0.0 {
                break;
            }
        }
        if total <= 0.0 {
            return Err(Error::ImpossibleData);
        }
        let n = sample_categorical(&weights, rng);

        let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * t).collect();
        times.sort_by(f64::total_cmp);
        let mut events = Vec::new();
        let mut state = i;
        let mut w = vec![0.0; m];
        for (k, &time) in times.iter().enumerate() {
            let rest = &self.powers[n - k - 1];
            for (s, ws) in w.iter_mut().enumerate() {
                *ws = self.r[state * m + s] * rest[s * m + j];
            }
            let next = sample_categorical(&w, rng);
            if next != state {
                events.push((time, next));
                state = next;
            }
        }
        Ok(BranchPath { start: i, events })
    }
}

/// Endpoint-conditioned sampling of a single branch history by
/// uniformization.
pub fn sample_branch_path<R: Rng + ?Sized>(
    i: usize,
    j: usize,
    t: f64,
    model: &RateModel,
    rng: &mut R,
) -> Result<BranchPath> {
    BridgeSampler::new(model, t).sample(i, j, t, rng)
}

/// Endpoint-conditioned sampling by forward simulation and rejection. When
/// `i != j` the first jump is drawn conditional on occurring before `t`.
/// Returns `None` if no path is accepted within `max_tries`.
pub fn sample_branch_path_rejection<R: Rng + ?Sized>(
    i: usize,
    j: usize,
    t: f64,
    model: &RateModel,
    max_tries: usize,
    rng: &mut R,
) -> Option<BranchPath> {
    let q = model.q();
    let m = model.m();
    let mut rates = vec![0.0; m];
    for _ in 0..max_tries {
        let mut events = Vec::new();
        let mut state = i;
        let mut time = 0.0;
        let exit = -q[(i, i)];
        if i != j {
            if exit <= 0.0 {
                return None;
            }
            let u: f64 = rng.random();
            time = -(1.0 - u * (1.0 - (-exit * t).exp())).ln() / exit;
        } else {
            time += exp_draw(exit, rng);
        }
        while time < t {
            for (s, r) in rates.iter_mut().enumerate() {
                *r = if s == state { 0.0 } else { q[(state, s)] };
            }
            state = sample_categorical(&rates, rng);
            events.push((time, state));
            time += exp_draw(-q[(state, state)], rng);
        }
        if state == j {
            return Some(BranchPath { start: i, events });
        }
    }
    None
}

fn exp_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// Draws node states from `P(states | D)`.
///
/// Partial likelihoods are computed once; each call to
/// [`ConditionalStateSampler::sample`] then draws the root from
/// `π ∘ F_root` and every child from `P(t_b)[parent, ·] ∘ F_child`.
/// Ambiguous tips are resolved in the same pass.
#[derive(Debug, Clone)]
pub struct ConditionalStateSampler {
    m: usize,
    partials: Vec<f64>,
}

impl ConditionalStateSampler {
    pub fn new(phylo: &Phylogeny, cache: &BranchMomentCache, tips: &TipData) -> Result<Self> {
        let m = cache.m();
        if tips.n_tips() != phylo.n_tips() || tips.m() != m || cache.n_branches() != phylo.n_branches() {
            return Err(Error::InvalidArgument("tip data, cache and tree do not match".into()));
        }
        let mut partials = vec![0.0; phylo.n_nodes() * m];
        let mut s = vec![0.0; phylo.n_branches() * m];
        let node = |c: usize, partials: &mut [f64], s: &[f64]| -> Result<()> {
            let f = &mut partials[c * m..(c + 1) * m];
            match phylo.child_branches(c) {
                None => tips.write_indicator(phylo.tip_index(c).expect("leaf is a tip"), f),
                Some([b1, b2]) => {
                    for i in 0..m {
                        f[i] = s[b1 * m + i] * s[b2 * m + i];
                    }
                    let mx = f.iter().copied().fold(0.0, f64::max);
                    if mx == 0.0 {
                        return Err(Error::ImpossibleData);
                    }
                    f.iter_mut().for_each(|x| *x /= mx);
                }
            }
            Ok(())
        };
        for &b in phylo.postorder() {
            let c = phylo.child_node(b);
            node(c, &mut partials, &s)?;
            let p = cache.p(b);
            for i in 0..m {
                s[b * m + i] = (0..m).map(|j| p[i * m + j] * partials[c * m + j]).sum();
            }
        }
        node(phylo.root(), &mut partials, &s)?;
        let root = &partials[phylo.root() * m..(phylo.root() + 1) * m];
        if root.iter().zip(cache.pi()).map(|(f, p)| f * p).sum::<f64>() <= 0.0 {
            return Err(Error::ImpossibleData);
        }
        Ok(ConditionalStateSampler { m, partials })
    }

    /// Fills `states` (indexed by node) with one conditional draw.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        phylo: &Phylogeny,
        cache: &BranchMomentCache,
        rng: &mut R,
        states: &mut [usize],
    ) {
        let m = self.m;
        let mut w = vec![0.0; m];
        let root = phylo.root();
        for (s, ws) in w.iter_mut().enumerate() {
            *ws = cache.pi()[s] * self.partials[root * m + s];
        }
        states[root] = sample_categorical(&w, rng);
        for &b in phylo.postorder().iter().rev() {
            let from = states[phylo.parent_node(b)];
            let c = phylo.child_node(b);
            let p = cache.p(b);
            for (s, ws) in w.iter_mut().enumerate() {
                *ws = p[from * m + s] * self.partials[c * m + s];
            }
            states[c] = sample_categorical(&w, rng);
        }
    }
}

/// One draw of node states (indexed by node) from `P(states | D)`.
pub fn sample_internal_states<R: Rng + ?Sized>(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    tips: &TipData,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let sampler = ConditionalStateSampler::new(phylo, cache, tips)?;
    let mut states = vec![0; phylo.n_nodes()];
    sampler.sample(phylo, cache, rng, &mut states);
    Ok(states)
}

/// A full mapping: node states, and histories with their summary values on
/// the sampled branches (`None` elsewhere).
#[derive(Debug, Clone, PartialEq)]
pub struct MappingSample {
    pub node_states: Vec<usize>,
    pub paths: Vec<Option<BranchPath>>,
    pub values: Vec<f64>,
}

impl MappingSample {
    pub fn total(&self, omega: &BranchSet) -> f64 {
        omega.iter().map(|b| self.values[b]).sum()
    }
}

/// Draws complete substitution mappings conditional on tip data.
#[derive(Debug, Clone)]
pub struct MappingSampler<'a> {
    phylo: &'a Phylogeny,
    cache: &'a BranchMomentCache,
    states: ConditionalStateSampler,
    bridge: BridgeSampler,
    weights: LabelWeights,
}

impl<'a> MappingSampler<'a> {
    pub fn new(
        phylo: &'a Phylogeny,
        cache: &'a BranchMomentCache,
        model: &RateModel,
        label: &SummaryLabel,
        tips: &TipData,
    ) -> Result<Self> {
        if model.m() != cache.m() {
            return Err(Error::InvalidArgument("model and cache state counts differ".into()));
        }
        let max_time = phylo.lengths().iter().copied().fold(0.0, f64::max);
        Ok(MappingSampler {
            phylo,
            cache,
            states: ConditionalStateSampler::new(phylo, cache, tips)?,
            bridge: BridgeSampler::new(model, max_time),
            weights: LabelWeights::new(label, model.m())?,
        })
    }

    /// A full mapping restricted to the branches in `sampled`.
    pub fn sample<R: Rng + ?Sized>(&self, sampled: &BranchSet, rng: &mut R) -> Result<MappingSample> {
        let mut node_states = vec![0; self.phylo.n_nodes()];
        self.states.sample(self.phylo, self.cache, rng, &mut node_states);
        let nb = self.phylo.n_branches();
        let mut paths = vec![None; nb];
        let mut values = vec![0.0; nb];
        for b in sampled.iter() {
            let path = self.branch_path(b, &node_states, rng)?;
            values[b] = self.path_value(&path, self.phylo.length(b));
            paths[b] = Some(path);
        }
        Ok(MappingSample { node_states, paths, values })
    }

    fn branch_path<R: Rng + ?Sized>(&self, b: usize, node_states: &[usize], rng: &mut R) -> Result<BranchPath> {
        let i = node_states[self.phylo.parent_node(b)];
        let j = node_states[self.phylo.child_node(b)];
        self.bridge.sample(i, j, self.phylo.length(b), rng)
    }

    fn path_value(&self, path: &BranchPath, t: f64) -> f64 {
        let m = self.weights.m;
        let mut h = 0.0;
        let mut state = path.start;
        let mut last = 0.0;
        for &(time, next) in &path.events {
            h += self.weights.jump[state * m + next] + self.weights.dwell[state] * (time - last);
            state = next;
            last = time;
        }
        h + self.weights.dwell[state] * (t - last)
    }

    /// `(H_Ω1, H_Ω2)` for one mapping; `omega2` may equal `omega1`.
    fn draw_pair<R: Rng + ?Sized>(
        &self,
        omega1: &BranchSet,
        omega2: &BranchSet,
        states: &mut [usize],
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        self.states.sample(self.phylo, self.cache, rng, states);
        let (mut h1, mut h2) = (0.0, 0.0);
        for b in 0..self.phylo.n_branches() {
            let (in1, in2) = (omega1.contains(b), omega2.contains(b));
            if !(in1 || in2) {
                continue;
            }
            let path = self.branch_path(b, states, rng)?;
            let h = self.path_value(&path, self.phylo.length(b));
            if in1 {
                h1 += h;
            }
            if in2 {
                h2 += h;
            }
        }
        Ok((h1, h2))
    }

    /// `reps` draws of `(H_Ω1, H_Ω2)`. Draw `k` uses stream `k / 256` of
    /// `seed`, so the output does not depend on the thread count.
    pub fn draw_totals(&self, omega1: &BranchSet, omega2: &BranchSet, reps: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
        let blocks: Vec<Vec<(f64, f64)>> = (0..reps.div_ceil(BLOCK))
            .into_par_iter()
            .map(|blk| {
                let mut rng = substream(seed, blk as u64);
                let mut states = vec![0; self.phylo.n_nodes()];
                let n = BLOCK.min(reps - blk * BLOCK);
                (0..n).map(|_| self.draw_pair(omega1, omega2, &mut states, &mut rng)).collect()
            })
            .collect::<Result<_>>()?;
        Ok(blocks.into_iter().flatten().collect())
    }
}

/// Monte Carlo moments of `H_Ω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub reps: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
}

impl From<SampleMoments> for McEstimate {
    fn from(s: SampleMoments) -> Self {
        McEstimate { reps: s.n, mean: s.mean, variance: s.variance, mean_se: s.mean_se, variance_se: s.variance_se }
    }
}

/// Monte Carlo moments of `(H_Ω1, H_Ω2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCovariance {
    pub first: McEstimate,
    pub second: McEstimate,
    pub covariance: f64,
    pub covariance_se: f64,
}

/// Posterior mean and variance of `H_Ω` from `reps` sampled mappings.
#[allow(clippy::too_many_arguments)]
pub fn mc_moments<R: Rng + ?Sized>(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    model: &RateModel,
    omega: &BranchSet,
    tips: &TipData,
    label: &SummaryLabel,
    reps: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if reps < 2 {
        return Err(Error::InvalidArgument("at least 2 replicates are needed".into()));
    }
    let sampler = MappingSampler::new(phylo, cache, model, label, tips)?;
    let draws = sampler.draw_totals(omega, omega, reps, rng.random())?;
    let xs: Vec<f64> = draws.iter().map(|d| d.0).collect();
    Ok(sample_moments(&xs).into())
}

#[allow(clippy::too_many_arguments)]
pub fn mc_covariance<R: Rng + ?Sized>(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    model: &RateModel,
    omega1: &BranchSet,
    omega2: &BranchSet,
    tips: &TipData,
    label: &SummaryLabel,
    reps: usize,
    rng: &mut R,
) -> Result<McCovariance> {
    if reps < 2 {
        return Err(Error::InvalidArgument("at least 2 replicates are needed".into()));
    }
    let sampler = MappingSampler::new(phylo, cache, model, label, tips)?;
    let draws = sampler.draw_totals(omega1, omega2, reps, rng.random())?;
    let xs: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let ys: Vec<f64> = draws.iter().map(|d| d.1).collect();
    Ok(covariance_summary(&xs, &ys))
}

fn covariance_summary(xs: &[f64], ys: &[f64]) -> McCovariance {
    let first = sample_moments(xs);
    let second = sample_moments(ys);
    let covariance = sample_covariance(xs, ys);
    let products: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - first.mean) * (y - second.mean)).collect();
    McCovariance {
        first: first.into(),
        second: second.into(),
        covariance,
        covariance_se: sample_moments(&products).mean_se,
    }
}

/// Monte Carlo estimates of `E_D[Var(H_Ω1 | D)]`, `E_D[Var(H_Ω2 | D)]` and
/// `E_D[Cov(H_Ω1, H_Ω2 | D)]` over single-column data sets drawn from the
/// model, with each conditional moment computed exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalExpectation {
    pub n_data: usize,
    pub expected_variance: [f64; 2],
    pub expected_variance_se: [f64; 2],
    pub expected_covariance: f64,
    pub expected_covariance_se: f64,
    /// Sample moments of the conditional means `E(H_Ωk | D)`.
    pub conditional_means: McCovariance,
}

/// Averages exact conditional moments over `n_data` columns simulated from
/// the model encoded in `cache`. Pass `omega2 = None` for a single set.
pub fn expected_conditional_moments<R: Rng + ?Sized>(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    omega1: &BranchSet,
    omega2: Option<&BranchSet>,
    n_data: usize,
    rng: &mut R,
) -> Result<ConditionalExpectation> {
    if n_data < 2 {
        return Err(Error::InvalidArgument("at least 2 simulated data sets are needed".into()));
    }
    let omega2 = omega2.unwrap_or(omega1);
    let seed: u64 = rng.random();
    let m = cache.m();
    let draws: Vec<([f64; 2], [f64; 2], f64)> = (0..n_data)
        .into_par_iter()
        .map_init(
            || (Workspace::new(), vec![0usize; phylo.n_nodes()]),
            |(ws, states), k| {
                let mut r = substream(seed, k as u64);
                simulate_node_states(phylo, cache, &mut r, states);
                let tip_states: Vec<usize> = (0..phylo.n_tips()).map(|t| states[phylo.tip_node(t)]).collect();
                let tips = TipData::from_states(&tip_states, m)?;
                let c = ws.covariance(phylo, cache, omega1, omega2, &tips, false)?;
                Ok((c.mean, c.variance, c.covariance))
            },
        )
        .collect::<Result<_>>()?;
    let col = |f: &dyn Fn(&([f64; 2], [f64; 2], f64)) -> f64| -> Vec<f64> { draws.iter().map(f).collect() };
    let v1 = sample_moments(&col(&|d| d.1[0]));
    let v2 = sample_moments(&col(&|d| d.1[1]));
    let cv = sample_moments(&col(&|d| d.2));
    Ok(ConditionalExpectation {
        n_data,
        expected_variance: [v1.mean, v2.mean],
        expected_variance_se: [v1.mean_se, v2.mean_se],
        expected_covariance: cv.mean,
        expected_covariance_se: cv.mean_se,
        conditional_means: covariance_summary(&col(&|d| d.0[0]), &col(&|d| d.0[1])),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{build_two_state, jukes_cantor, restricted_moment_matrices};
    use crate::moments::build_cache;
    use crate::newick::parse_newick;
    use crate::rng::seeded;

    #[test]
    fn tiny_time_gives_empty_path() {
        let jc = jukes_cantor();
        let mut rng = seeded(1);
        let empty = (0..1000)
            .filter(|_| sample_branch_path(2, 2, 1e-8, &jc, &mut rng).unwrap().n_jumps() == 0)
            .count();
        assert_eq!(empty, 1000);
    }

    #[test]
    fn two_state_parity() {
        let model = build_two_state(1.3, 0.7).unwrap();
        let sampler = BridgeSampler::new(&model, 2.0);
        let mut rng = seeded(2);
        for _ in 0..2000 {
            let p = sampler.sample(0, 1, 1.5, &mut rng).unwrap();
            assert_eq!(p.n_jumps() % 2, 1);
            assert_eq!(p.end(), 1);
            assert!(p.events.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 != w[1].1));
        }
    }

    #[test]
    fn bridge_mean_jump_count() {
        let model = build_two_state(1.0, 1.0).unwrap();
        let label = SummaryLabel::all_substitutions(2);
        let (e1, _) = restricted_moment_matrices(&model, &label, 1.0).unwrap();
        let p = model.transition_matrix(1.0).unwrap();
        let exact = e1[(0, 0)] / p[(0, 0)];
        let sampler = BridgeSampler::new(&model, 1.0);
        let mut rng = seeded(3);
        let xs: Vec<f64> = (0..100_000).map(|_| sampler.sample(0, 0, 1.0, &mut rng).unwrap().n_jumps() as f64).collect();
        let s = sample_moments(&xs);
        assert!((s.mean - exact).abs() < 4.0 * s.mean_se, "{} vs {exact}", s.mean);
    }

    #[test]
    fn rejection_and_uniformization_agree() {
        let jc = jukes_cantor();
        let sampler = BridgeSampler::new(&jc, 0.6);
        let mut rng = seeded(4);
        let n = 40_000;
        let a: Vec<f64> = (0..n).map(|_| sampler.sample(0, 3, 0.6, &mut rng).unwrap().n_jumps() as f64).collect();
        let b: Vec<f64> = (0..n)
            .map(|_| sample_branch_path_rejection(0, 3, 0.6, &jc, 10_000, &mut rng).unwrap().n_jumps() as f64)
            .collect();
        let (sa, sb) = (sample_moments(&a), sample_moments(&b));
        let se = (sa.mean_se.powi(2) + sb.mean_se.powi(2)).sqrt();
        assert!((sa.mean - sb.mean).abs() < 4.0 * se);
    }

    #[test]
    fn zero_lengths_force_tip_states() {
        let tree = parse_newick("((A:0,B:0):0,C:0);").unwrap();
        let cache = build_cache(&jukes_cantor(), &tree, &SummaryLabel::all_substitutions(4)).unwrap();
        let tips = TipData::from_states(&[2, 2, 2], 4).unwrap();
        let states = sample_internal_states(&tree, &cache, &tips, &mut seeded(5)).unwrap();
        assert!(states.iter().all(|&s| s == 2));
    }

    #[test]
    fn mc_is_reproducible() {
        let tree = parse_newick("((A:0.2,B:0.3):0.1,C:0.4);").unwrap();
        let jc = jukes_cantor();
        let label = SummaryLabel::all_substitutions(4);
        let cache = build_cache(&jc, &tree, &label).unwrap();
        let tips = TipData::from_states(&[0, 1, 1], 4).unwrap();
        let omega = BranchSet::all(4);
        let a = mc_moments(&tree, &cache, &jc, &omega, &tips, &label, 2, &mut seeded(6)).unwrap();
        let b = mc_moments(&tree, &cache, &jc, &omega, &tips, &label, 2, &mut seeded(6)).unwrap();
        assert_eq!(a, b);
        assert!(mc_moments(&tree, &cache, &jc, &omega, &tips, &label, 1, &mut seeded(6)).is_err());
    }

    #[test]
    fn zero_length_tree_has_no_conditional_variance() {
        let tree = parse_newick("((A:0,B:0):0,C:0);").unwrap();
        let cache = build_cache(&jukes_cantor(), &tree, &SummaryLabel::all_substitutions(4)).unwrap();
        let e = expected_conditional_moments(&tree, &cache, &BranchSet::all(4), None, 50, &mut seeded(7)).unwrap();
        assert_eq!(e.expected_variance, [0.0, 0.0]);
    }
}
