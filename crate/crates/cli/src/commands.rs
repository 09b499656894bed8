use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use phylomoments::ctmc::{scale_phylogeny, ModelConfig, SummaryLabel};
use phylomoments::moments::{
    build_cache, per_site_covariance, per_site_moments, prior_covariance, prior_moments,
};
use phylomoments::newick::{random_tree, BranchSet, Phylogeny};
use phylomoments::ppred::{read_posterior, run_ppred, t_var, t_var_monte_carlo, Discrepancy};
use phylomoments::rng::{seeded, substream};
use phylomoments::seqsim::{
    format_alignment, read_alignment, simulate_alignment, AlignmentFormat,
};
use phylomoments::simmap::MappingSampler;
use phylomoments::sph::{
    power_simulation, subtree_tests, test_conservation, PowerSettings, TestResult, Variant, DEFAULT_MC_DATASETS,
};
use phylomoments::stats::sample_moments;
use rand::Rng;

use crate::input::{parse_list, parse_omega, read_tree, resolve_branch, AlignmentArgs, ModelArgs};
use crate::output::{num, Table};
use crate::Context;

fn model_header(cfg: &ModelConfig) -> String {
    cfg.to_string().lines().map(|l| format!("model: {l}")).collect::<Vec<_>>().join("\n")
}

fn open(ctx: &Context, extra: &[String]) -> Result<Table> {
    let mut table = Table::create(ctx.output.as_deref())?;
    table.comment(ctx.header())?;
    for line in extra {
        table.comment(line)?;
    }
    Ok(table)
}

#[derive(Args, Debug)]
pub struct MomentsArgs {
    /// Newick tree file.
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    alignment: AlignmentArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Branch set: all, internal, terminal, subtree:<branch> or a list such as 0,3-5.
    #[arg(long, default_value = "all")]
    omega: String,
}

pub fn moments(ctx: &Context, a: &MomentsArgs) -> Result<()> {
    let tree = read_tree(&a.tree)?;
    let (cfg, model, label) = a.model.load()?;
    let aln = a.alignment.load(&tree)?;
    let omega = parse_omega(&tree, &a.omega)?;
    let cache = build_cache(&model, &tree, &label)?;
    let results = per_site_moments(&tree, &cache, &omega, aln.columns())?;
    let mut t = open(ctx, &[model_header(&cfg), format!("omega: {}", a.omega)])?;
    t.row(["site", "logP", "mean", "variance"])?;
    for (i, r) in results.iter().enumerate() {
        t.row([(i + 1).to_string(), num(r.log_likelihood), num(r.mean), num(r.variance)])?;
    }
    let total_mean: f64 = results.iter().map(|r| r.mean).sum();
    let total_var: f64 = results.iter().map(|r| r.variance).sum();
    t.comment(format!("sum of means: {total_mean}\nsum of variances: {total_var}"))?;
    t.finish()
}

#[derive(Args, Debug)]
pub struct CovArgs {
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    alignment: AlignmentArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// First branch set.
    #[arg(long)]
    omega1: String,
    /// Second branch set.
    #[arg(long)]
    omega2: String,
}

pub fn cov(ctx: &Context, a: &CovArgs) -> Result<()> {
    let tree = read_tree(&a.tree)?;
    let (cfg, model, label) = a.model.load()?;
    let aln = a.alignment.load(&tree)?;
    let o1 = parse_omega(&tree, &a.omega1)?;
    let o2 = parse_omega(&tree, &a.omega2)?;
    let cache = build_cache(&model, &tree, &label)?;
    let results = per_site_covariance(&tree, &cache, &o1, &o2, aln.columns())?;
    let mut t = open(ctx, &[model_header(&cfg), format!("omega1: {}\nomega2: {}", a.omega1, a.omega2)])?;
    t.row(["site", "logP", "mean1", "mean2", "variance1", "variance2", "covariance"])?;
    for (i, r) in results.iter().enumerate() {
        t.row([
            (i + 1).to_string(),
            num(r.log_likelihood),
            num(r.mean[0]),
            num(r.mean[1]),
            num(r.variance[0]),
            num(r.variance[1]),
            num(r.covariance),
        ])?;
    }
    t.finish()
}

#[derive(Args, Debug)]
pub struct PriorArgs {
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "all")]
    omega: String,
    /// Optional second branch set for the prior covariance.
    #[arg(long)]
    omega2: Option<String>,
}

pub fn prior(ctx: &Context, a: &PriorArgs) -> Result<()> {
    let tree = read_tree(&a.tree)?;
    let (cfg, model, label) = a.model.load()?;
    let cache = build_cache(&model, &tree, &label)?;
    let o1 = parse_omega(&tree, &a.omega)?;
    let mut t = open(ctx, &[model_header(&cfg), format!("omega: {}", a.omega)])?;
    t.row(["quantity", "value"])?;
    match &a.omega2 {
        None => {
            let r = prior_moments(&tree, &cache, &o1)?;
            t.row(["mean", &num(r.mean)])?;
            t.row(["variance", &num(r.variance)])?;
        }
        Some(spec) => {
            t.comment(format!("omega2: {spec}"))?;
            let o2 = parse_omega(&tree, spec)?;
            let r = prior_covariance(&tree, &cache, &o1, &o2)?;
            for (k, v) in [
                ("mean1", r.mean[0]),
                ("mean2", r.mean[1]),
                ("variance1", r.variance[0]),
                ("variance2", r.variance[1]),
                ("covariance", r.covariance),
                ("correlation", r.correlation()),
            ] {
                t.row([k, &num(v)])?;
            }
        }
    }
    t.finish()
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of columns.
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Scale every branch length by this factor.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Extra scale applied to the subtree below `--subtree-branch`.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Branch index or comma list of the tips below it.
    #[arg(long)]
    subtree_branch: Option<String>,
    /// Output format; guessed from the output extension, else FASTA.
    #[arg(long)]
    format: Option<AlignmentFormat>,
}

pub fn simulate(ctx: &Context, a: &SimulateArgs) -> Result<()> {
    let tree = read_tree(&a.tree)?;
    let (_, model, _) = a.model.load()?;
    let sub = match &a.subtree_branch {
        Some(spec) => tree.subtree_branches(resolve_branch(&tree, spec)?)?,
        None if a.lambda != 1.0 => bail!("--lambda needs --subtree-branch"),
        None => BranchSet::empty(tree.n_branches()),
    };
    let scaled = scale_phylogeny(&tree, a.rho, a.lambda, &sub)?;
    let aln = simulate_alignment(&scaled, &model, a.length, &mut seeded(a.seed))?;
    let format = a
        .format
        .or_else(|| ctx.output.as_deref().map(AlignmentFormat::from_path))
        .unwrap_or(AlignmentFormat::Fasta);
    log::info!("simulated {} columns for {} taxa", aln.len(), aln.n_taxa());
    let mut t = Table::create(ctx.output.as_deref())?;
    t.raw(&format_alignment(&aln, format)?)?;
    t.finish()
}

#[derive(Args, Debug)]
pub struct SimmapArgs {
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    alignment: AlignmentArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "all")]
    omega: String,
    /// Sampled mappings per site.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write every sampled value of H to this TSV file.
    #[arg(long)]
    dump: Option<PathBuf>,
}

pub fn simmap(ctx: &Context, a: &SimmapArgs) -> Result<()> {
    if a.reps < 2 {
        bail!("--reps must be at least 2");
    }
    let tree = read_tree(&a.tree)?;
    let (cfg, model, label) = a.model.load()?;
    let aln = a.alignment.load(&tree)?;
    let omega = parse_omega(&tree, &a.omega)?;
    let cache = build_cache(&model, &tree, &label)?;
    let exact = per_site_moments(&tree, &cache, &omega, aln.columns())?;
    let header = [model_header(&cfg), format!("omega: {}\nseed: {}\nreps: {}", a.omega, a.seed, a.reps)];
    let mut t = open(ctx, &header)?;
    let mut dump = match &a.dump {
        Some(p) => {
            let mut d = Table::create(Some(p))?;
            d.comment(ctx.header())?;
            d.row(["site", "rep", "H"])?;
            Some(d)
        }
        None => None,
    };
    t.row(["site", "exact_mean", "exact_variance", "mc_mean", "mc_mean_se", "mc_variance", "mc_variance_se"])?;
    for (i, col) in aln.columns().iter().enumerate() {
        let sampler = MappingSampler::new(&tree, &cache, &model, &label, col).with_context(|| format!("site {}", i + 1))?;
        let draws = sampler.draw_totals(&omega, &omega, a.reps, substream(a.seed, i as u64).random())?;
        let hs: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let s = sample_moments(&hs);
        let site = (i + 1).to_string();
        t.row([
            site.clone(),
            num(exact[i].mean),
            num(exact[i].variance),
            num(s.mean),
            num(s.mean_se),
            num(s.variance),
            num(s.variance_se),
        ])?;
        if let Some(d) = dump.as_mut() {
            for (k, h) in hs.iter().enumerate() {
                d.row([site.clone(), (k + 1).to_string(), num(*h)])?;
            }
        }
    }
    if let Some(d) = dump {
        d.finish()?;
    }
    t.finish()
}

#[derive(Args, Debug)]
pub struct PpredArgs {
    /// Observed alignment.
    #[arg(long)]
    alignment: PathBuf,
    #[arg(long)]
    format: Option<AlignmentFormat>,
    /// Posterior draws: tab-separated tree, six exchangeabilities and four frequencies per row.
    #[arg(long)]
    posterior: PathBuf,
    /// Number of posterior draws to use; all when omitted.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma list of discrepancies (tvar, tdisp).
    #[arg(long, default_value = "tvar,tdisp")]
    discrepancy: String,
    /// Also write the per-draw observed and replicate discrepancies here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

pub fn ppred(ctx: &Context, a: &PpredArgs) -> Result<()> {
    let format = a.format.unwrap_or_else(|| AlignmentFormat::from_path(&a.alignment));
    let observed = read_alignment(&a.alignment, format)?;
    let posterior = read_posterior(&a.posterior)?;
    let discrepancies: Vec<Discrepancy> = parse_list(&a.discrepancy, "discrepancy")?;
    let n = a.n.unwrap_or(posterior.len());
    let report = run_ppred(&observed, &posterior, &discrepancies, n, &mut seeded(a.seed))?;
    let mut t = open(ctx, &[format!("seed: {}\nposterior draws: {n}\nsites: {}", a.seed, observed.len())])?;
    t.row(["discrepancy", "ppp", "mean_observed", "mean_replicate"])?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    for (d, disc) in report.discrepancies.iter().enumerate() {
        t.row([disc.name().to_string(), num(report.ppp[d]), num(mean(&report.t_obs[d])), num(mean(&report.t_rep[d]))])?;
    }
    for (d, disc) in report.discrepancies.iter().enumerate() {
        t.comment(format!("ppp {}: {}", disc.name(), report.ppp[d]))?;
    }
    if let Some(path) = &a.dump {
        let mut dump = Table::create(Some(path))?;
        dump.comment(ctx.header())?;
        dump.row(["draw", "discrepancy", "observed", "replicate"])?;
        for (d, disc) in report.discrepancies.iter().enumerate() {
            for i in 0..report.n {
                dump.row([(i + 1).to_string(), disc.name().into(), num(report.t_obs[d][i]), num(report.t_rep[d][i])])?;
            }
        }
        dump.finish()?;
    }
    t.finish()
}

#[derive(Args, Debug)]
pub struct SphArgs {
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Test families (all, sub-marginal, sub-conditional-ratio) or single
    /// variants such as all_modified, comma separated.
    #[arg(long, default_value = "all")]
    variant: String,
    /// Branch index, or comma list of the tips below it, for subtree tests.
    #[arg(long)]
    subtree_branch: Option<String>,
    /// Simulated data sets for expected conditional variances.
    #[arg(long, default_value_t = DEFAULT_MC_DATASETS)]
    mmc: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Observed alignment: run the tests on it. Without it, run a power study.
    #[arg(long)]
    alignment: Option<PathBuf>,
    #[arg(long)]
    format: Option<AlignmentFormat>,
    /// Power study: whole-tree scale factors.
    #[arg(long, default_value = "1")]
    rho_grid: String,
    /// Power study: subtree scale factors.
    #[arg(long, default_value = "1")]
    lambda_grid: String,
    /// Power study: alignment lengths.
    #[arg(long = "L-grid", visible_alias = "l-grid", default_value = "10")]
    l_grid: String,
    /// Power study: replicates per grid point.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Power study: significance thresholds to tabulate.
    #[arg(long, default_value = "0.001,0.01,0.05,0.1,0.2,0.5")]
    thresholds: String,
    /// Power study: also write every replicate p-value here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn parse_variants(spec: &str) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let group: &[Variant] = match part {
            "all" => &[Variant::AllModified, Variant::AllOriginal],
            "sub-marginal" | "sub_marginal" => &[Variant::SubMarginalModified, Variant::SubMarginalOriginal],
            "sub-conditional-ratio" | "sub_conditional_ratio" => {
                &[Variant::RatioModified, Variant::SubConditionalOriginal]
            }
            other => &[other.parse::<Variant>()?],
        };
        for v in group {
            if !out.contains(v) {
                out.push(*v);
            }
        }
    }
    if out.is_empty() {
        bail!("no test variant selected");
    }
    Ok(out)
}

fn variant_label(v: Variant) -> String {
    if v.is_approximation() {
        format!("{v}(normal-approx)")
    } else {
        v.to_string()
    }
}

pub fn sph(ctx: &Context, a: &SphArgs) -> Result<()> {
    let tree = read_tree(&a.tree)?;
    let (cfg, model, _) = a.model.load()?;
    let variants = parse_variants(&a.variant)?;
    let b = a.subtree_branch.as_deref().map(|s| resolve_branch(&tree, s)).transpose()?;
    if variants.iter().any(|v| v.needs_subtree()) && b.is_none() {
        bail!("subtree variants need --subtree-branch");
    }
    let mut header = vec![model_header(&cfg), format!("seed: {}\nmmc: {}", a.seed, a.mmc)];
    if let Some(b) = b {
        header.push(format!("subtree branch: {b} ({})", tree.tips_below(b)?.join(",")));
    }
    match &a.alignment {
        Some(path) => sph_test(ctx, a, &tree, &model, b, &variants, path, &header),
        None => sph_power(ctx, a, &tree, &model, b, &variants, &header),
    }
}

#[allow(clippy::too_many_arguments)]
fn sph_test(
    ctx: &Context,
    a: &SphArgs,
    tree: &Phylogeny,
    model: &phylomoments::ctmc::RateModel,
    b: Option<usize>,
    variants: &[Variant],
    path: &std::path::Path,
    header: &[String],
) -> Result<()> {
    let aln = AlignmentArgs { alignment: path.to_path_buf(), format: a.format }.load(tree)?;
    let cols = aln.columns();
    let mut rng = seeded(a.seed);
    let mut results: Vec<(Variant, Result<TestResult>)> = Vec::new();
    for &v in variants.iter().filter(|v| !v.needs_subtree()) {
        results.push((v, test_conservation(cols, tree, model, None, v, a.mmc, &mut rng).map_err(Into::into)));
    }
    let sub: Vec<Variant> = variants.iter().copied().filter(|v| v.needs_subtree()).collect();
    if let (false, Some(b)) = (sub.is_empty(), b) {
        let out = subtree_tests(cols, tree, model, b, &sub, a.mmc, &mut rng)?;
        results.extend(sub.iter().copied().zip(out.into_iter().map(|r| r.map_err(Into::into))));
    }
    let mut t = open(ctx, header)?;
    t.comment(format!("sites: {}", cols.len()))?;
    t.row(["variant", "statistic", "p_value", "rho_hat", "null_mean", "null_variance"])?;
    for (v, r) in results {
        match r {
            Ok(r) => t.row([
                variant_label(v),
                num(r.statistic),
                num(r.p_value),
                r.rho_hat.map_or("NA".into(), num),
                num(r.null_mean),
                num(r.null_variance),
            ])?,
            Err(e) => {
                log::warn!("{v}: {e:#}");
                t.row([variant_label(v), "NA".into(), "NA".into(), "NA".into(), "NA".into(), "NA".into()])?;
            }
        }
    }
    t.finish()
}

fn sph_power(
    ctx: &Context,
    a: &SphArgs,
    tree: &Phylogeny,
    model: &phylomoments::ctmc::RateModel,
    b: Option<usize>,
    variants: &[Variant],
    header: &[String],
) -> Result<()> {
    let sites: Vec<usize> = parse_list(&a.l_grid, "alignment length")?;
    let rhos: Vec<f64> = parse_list(&a.rho_grid, "rho")?;
    let lambdas: Vec<f64> = parse_list(&a.lambda_grid, "lambda")?;
    let thresholds: Vec<f64> = parse_list(&a.thresholds, "threshold")?;
    let settings = PowerSettings { subtree_branch: b, variants: variants.to_vec(), reps: a.reps, m_mc: a.mmc, seed: a.seed };
    let points = power_simulation(tree, model, &sites, &rhos, &lambdas, &settings)?;
    let mut t = open(ctx, header)?;
    t.comment(format!("replicates per grid point: {}", a.reps))?;
    t.row(["L", "rho", "lambda", "variant", "threshold", "power", "degenerate"])?;
    for p in &points {
        for (v, variant) in p.variants.iter().enumerate() {
            for (thr, power) in thresholds.iter().zip(p.power_curve(v, &thresholds)) {
                t.row([
                    p.sites.to_string(),
                    num(p.rho),
                    num(p.lambda),
                    variant_label(*variant),
                    num(*thr),
                    num(power),
                    p.degenerate[v].to_string(),
                ])?;
            }
        }
    }
    if let Some(path) = &a.dump {
        let mut dump = Table::create(Some(path))?;
        dump.comment(ctx.header())?;
        dump.row(["L", "rho", "lambda", "variant", "rep", "p_value"])?;
        for p in &points {
            for (v, variant) in p.variants.iter().enumerate() {
                for (k, pv) in p.p_values[v].iter().enumerate() {
                    dump.row([
                        p.sites.to_string(),
                        num(p.rho),
                        num(p.lambda),
                        variant.to_string(),
                        (k + 1).to_string(),
                        num(*pv),
                    ])?;
                }
            }
        }
        dump.finish()?;
    }
    t.finish()
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Tip counts of the random trees.
    #[arg(long, default_value = "17,100,1000")]
    tree_sizes: String,
    /// Alignment lengths.
    #[arg(long, default_value = "50")]
    lengths: String,
    /// Mappings per site for the Monte Carlo estimate.
    #[arg(long, default_value = "100,1000")]
    mc_reps: String,
    /// Skip Monte Carlo timing on trees with more tips than this.
    #[arg(long, default_value_t = 100)]
    mc_max_tips: usize,
    /// Mean branch length of the random trees.
    #[arg(long, default_value_t = 0.1)]
    mean_length: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Mean wall time of `f`, repeated until at least `budget` seconds elapse.
fn time_it(budget: f64, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    let mut calls = 0u32;
    loop {
        f()?;
        calls += 1;
        let elapsed = start.elapsed().as_secs_f64();
        if elapsed >= budget {
            return Ok(elapsed / calls as f64);
        }
    }
}

pub fn bench(ctx: &Context, a: &BenchArgs) -> Result<()> {
    let sizes: Vec<usize> = parse_list(&a.tree_sizes, "tree size")?;
    let lengths: Vec<usize> = parse_list(&a.lengths, "alignment length")?;
    let mc_reps: Vec<usize> = parse_list(&a.mc_reps, "replicate count")?;
    if sizes.len() * lengths.len() < 2 {
        bail!("give at least two (tree size, length) cells");
    }
    let (cfg, model, _) = a.model.load()?;
    let label = SummaryLabel::all_substitutions(model.m());
    let mut t = open(ctx, &[model_header(&cfg), format!("seed: {}", a.seed)])?;
    t.row(["tips", "sites", "method", "mappings_per_site", "seconds", "us_per_tip_site", "ratio_to_exact"])?;
    for (k, &n) in sizes.iter().enumerate() {
        let tree = random_tree(n, a.mean_length, &mut substream(a.seed, k as u64))?;
        for &len in &lengths {
            let aln = simulate_alignment(&tree, &model, len, &mut substream(a.seed, (1 << 32) + k as u64))?;
            let cols = aln.columns();
            let exact = time_it(0.2, || {
                let cache = build_cache(&model, &tree, &label)?;
                std::hint::black_box(t_var(cols, &tree, &cache)?);
                Ok(())
            })?;
            let per = |s: f64| num(s * 1e6 / (n * len) as f64);
            t.row([n.to_string(), len.to_string(), "exact".into(), "NA".into(), num(exact), per(exact), num(1.0)])?;
            for &m in &mc_reps {
                if n > a.mc_max_tips {
                    log::info!("skipping Monte Carlo with {m} mappings on {n} tips");
                    continue;
                }
                let mut rng = substream(a.seed, (2 << 32) + k as u64);
                let start = Instant::now();
                let cache = build_cache(&model, &tree, &label)?;
                t_var_monte_carlo(cols, &tree, &cache, &model, m, &mut rng)?;
                let mc = start.elapsed().as_secs_f64();
                t.row([n.to_string(), len.to_string(), "monte_carlo".into(), m.to_string(), num(mc), per(mc), num(mc / exact)])?;
            }
        }
    }
    t.finish()
}
