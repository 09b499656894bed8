//! Loading trees, alignments and models, and resolving branch sets.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use phylomoments::ctmc::{ModelConfig, RateModel, SummaryLabel};
use phylomoments::newick::{parse_newick, BranchSet, Phylogeny};
use phylomoments::seqsim::{read_alignment, Alignment, AlignmentFormat};

pub fn read_tree(path: &Path) -> Result<Phylogeny> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read tree file {}", path.display()))?;
    parse_newick(&text).with_context(|| format!("invalid tree in {}", path.display()))
}

#[derive(Args, Debug, Clone)]
pub struct AlignmentArgs {
    /// Alignment file (FASTA, PHYLIP or whitespace-separated tokens).
    #[arg(long)]
    pub alignment: PathBuf,
    /// Alignment format; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<AlignmentFormat>,
}

impl AlignmentArgs {
    /// Reads the alignment with rows in the tree's tip order.
    pub fn load(&self, tree: &Phylogeny) -> Result<Alignment> {
        let format = self.format.unwrap_or_else(|| AlignmentFormat::from_path(&self.alignment));
        let aln = read_alignment(&self.alignment, format)?;
        aln.for_tree(tree).with_context(|| format!("alignment {} does not match the tree", self.alignment.display()))
    }
}

/// Model configuration file plus per-key overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Model configuration file with `key = value` lines.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of states.
    #[arg(long = "m", visible_alias = "states")]
    pub m: Option<String>,
    /// Exchangeabilities for state pairs i < j in row-major order.
    #[arg(long, allow_hyphen_values = true)]
    pub exchangeabilities: Option<String>,
    /// Stationary frequencies.
    #[arg(long)]
    pub base_freqs: Option<String>,
    /// Rescale to one expected substitution per unit time (true/false).
    #[arg(long)]
    pub normalize: Option<String>,
    /// `count` or `dwelling`.
    #[arg(long)]
    pub label_kind: Option<String>,
    /// Labeled substitutions as `i>j` pairs, or `all`.
    #[arg(long)]
    pub label_pairs: Option<String>,
    /// One 0/1 flag per state for dwelling times.
    #[arg(long)]
    pub state_mask: Option<String>,
}

impl ModelArgs {
    pub fn config(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.model {
            Some(path) => ModelConfig::read(path).with_context(|| format!("in model file {}", path.display()))?,
            None => ModelConfig::default(),
        };
        let overrides = [
            ("m", &self.m),
            ("exchangeabilities", &self.exchangeabilities),
            ("base_freqs", &self.base_freqs),
            ("normalize", &self.normalize),
            ("label_kind", &self.label_kind),
            ("label_pairs", &self.label_pairs),
            ("state_mask", &self.state_mask),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v).with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        Ok(cfg)
    }

    pub fn load(&self) -> Result<(ModelConfig, RateModel, SummaryLabel)> {
        let cfg = self.config()?;
        let model = cfg.model()?;
        let label = cfg.label()?;
        Ok((cfg, model, label))
    }
}

/// Resolves a branch given by index or by the names of the tips below it.
pub fn resolve_branch(tree: &Phylogeny, spec: &str) -> Result<usize> {
    if let Ok(b) = spec.trim().parse::<usize>() {
        tree.check_branch(b)?;
        return Ok(b);
    }
    let mut wanted: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    for name in &wanted {
        if tree.find_tip(name).is_none() {
            bail!("unknown tip `{name}` in branch specification `{spec}`");
        }
    }
    wanted.sort_unstable();
    (0..tree.n_branches())
        .find(|&b| {
            let mut below = tree.tips_below(b).expect("valid branch");
            below.sort_unstable();
            below == wanted
        })
        .ok_or_else(|| anyhow!("no branch has exactly the tips {}", wanted.join(",")))
}

/// Parses a branch set: `all`, `internal`, `terminal`, `subtree:<branch>`
/// or a comma list of indices and inclusive ranges `a-b`.
pub fn parse_omega(tree: &Phylogeny, spec: &str) -> Result<BranchSet> {
    let nb = tree.n_branches();
    let spec = spec.trim();
    match spec {
        "all" => return Ok(BranchSet::all(nb)),
        "internal" => return Ok(tree.internal_branches()),
        "terminal" => return Ok(tree.terminal_branches()),
        _ => {}
    }
    if let Some(rest) = spec.strip_prefix("subtree:") {
        return Ok(tree.subtree_branches(resolve_branch(tree, rest)?)?);
    }
    let mut indices = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let index = |s: &str| s.trim().parse::<usize>().map_err(|_| anyhow!("`{s}` is not a branch index in `{spec}`"));
        match part.split_once('-') {
            Some((a, b)) => indices.extend(index(a)?..=index(b)?),
            None => indices.push(index(part)?),
        }
    }
    if indices.is_empty() {
        bail!("empty branch set `{spec}`");
    }
    Ok(BranchSet::from_indices(nb, indices)?)
}

pub fn parse_list<T: std::str::FromStr>(spec: &str, what: &str) -> Result<Vec<T>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| anyhow!("`{s}` is not a valid {what}")))
        .collect()
}
