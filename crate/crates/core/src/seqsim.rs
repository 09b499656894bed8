//! Alignments: simulation under a rate model and FASTA / PHYLIP / token I/O.
//!
//! DNA states are fixed as `0, 1, 2, 3 = A, C, G, T`. IUPAC ambiguity codes
//! become state sets; `-`, `?`, `N` and `X` are fully missing and are
//! written back as `N`. Models with `m != 4` use the token format: a header
//! line `ntax nchar nstates`, then one row per taxon with the name followed
//! by whitespace-separated tokens, each a 0-based state, `?` for missing,
//! or states joined by `/` for ambiguity.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::ctmc::RateModel;
use crate::error::{Error, Result};
use crate::moments::{full_mask, BranchMomentCache, TipData};
use crate::newick::Phylogeny;

/// Columns of tip states with the taxon names they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    names: Vec<String>,
    m: usize,
    columns: Vec<TipData>,
}

impl Alignment {
    pub fn new(names: Vec<String>, m: usize, columns: Vec<TipData>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (k, name) in names.iter().enumerate() {
            if seen.insert(name.as_str(), k).is_some() {
                return Err(Error::Alignment(format!("duplicate taxon `{name}`")));
            }
        }
        for (i, col) in columns.iter().enumerate() {
            if col.n_tips() != names.len() || col.m() != m {
                return Err(Error::Alignment(format!("column {i} does not match {} taxa / {m} states", names.len())));
            }
        }
        Ok(Alignment { names, m, columns })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn n_taxa(&self) -> usize {
        self.names.len()
    }

    pub fn columns(&self) -> &[TipData] {
        &self.columns
    }

    pub fn into_columns(self) -> Vec<TipData> {
        self.columns
    }

    /// Same alignment with rows reordered to the tree's tip order.
    pub fn for_tree(&self, phylo: &Phylogeny) -> Result<Alignment> {
        let lookup: HashMap<&str, usize> = self.names.iter().enumerate().map(|(k, n)| (n.as_str(), k)).collect();
        for name in &self.names {
            if phylo.find_tip(name).is_none() {
                return Err(Error::Alignment(format!("taxon `{name}` is not a tip of the tree")));
            }
        }
        let order = phylo
            .tip_names()
            .iter()
            .map(|tip| {
                lookup
                    .get(tip.as_str())
                    .copied()
                    .ok_or_else(|| Error::Alignment(format!("tip `{tip}` has no sequence")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Alignment {
            names: phylo.tip_names().to_vec(),
            m: self.m,
            columns: self.columns.iter().map(|c| c.permuted(&order)).collect(),
        })
    }

    /// Columns `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Alignment {
        Alignment { names: self.names.clone(), m: self.m, columns: self.columns[start..end].to_vec() }
    }

    /// Distinct columns and how often each occurs, in first-seen order.
    pub fn patterns(&self) -> (Vec<TipData>, Vec<usize>) {
        let mut index: HashMap<&TipData, usize> = HashMap::new();
        let mut pats = Vec::new();
        let mut counts = Vec::new();
        for col in &self.columns {
            match index.get(col) {
                Some(&k) => counts[k] += 1,
                None => {
                    index.insert(col, pats.len());
                    pats.push(col.clone());
                    counts.push(1);
                }
            }
        }
        (pats, counts)
    }
}

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

/// Simulates `len` independent columns: root state from the stationary
/// distribution, each child from the row of `P(t_b)` for its parent's state.
pub fn simulate_alignment<R: Rng + ?Sized>(
    phylo: &Phylogeny,
    model: &RateModel,
    len: usize,
    rng: &mut R,
) -> Result<Alignment> {
    let cache = BranchMomentCache::transitions_only(model, phylo)?;
    simulate_with_cache(phylo, &cache, len, rng)
}

/// As [`simulate_alignment`], reusing the transition matrices of `cache`.
pub fn simulate_with_cache<R: Rng + ?Sized>(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    len: usize,
    rng: &mut R,
) -> Result<Alignment> {
    let m = cache.m();
    let mut states = vec![0usize; phylo.n_nodes()];
    let mut columns = Vec::with_capacity(len);
    for _ in 0..len {
        simulate_node_states(phylo, cache, rng, &mut states);
        let tips: Vec<usize> = (0..phylo.n_tips()).map(|k| states[phylo.tip_node(k)]).collect();
        columns.push(TipData::from_states(&tips, m)?);
    }
    Alignment::new(phylo.tip_names().to_vec(), m, columns)
}

/// Fills `states` (indexed by node) with one draw of the full node history.
pub fn simulate_node_states<R: Rng + ?Sized>(
    phylo: &Phylogeny,
    cache: &BranchMomentCache,
    rng: &mut R,
    states: &mut [usize],
) {
    let m = cache.m();
    states[phylo.root()] = sample_categorical(cache.pi(), rng);
    for &b in phylo.postorder().iter().rev() {
        let from = states[phylo.parent_node(b)];
        let row = &cache.p(b)[from * m..(from + 1) * m];
        states[phylo.child_node(b)] = sample_categorical(row, rng);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentFormat {
    Fasta,
    Phylip,
    Tokens,
}

impl AlignmentFormat {
    /// Guesses the format from a file extension; defaults to FASTA.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("phy" | "phylip") => AlignmentFormat::Phylip,
            Some("tok" | "tokens" | "txt") => AlignmentFormat::Tokens,
            _ => AlignmentFormat::Fasta,
        }
    }
}

impl std::str::FromStr for AlignmentFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fasta" | "fa" => Ok(AlignmentFormat::Fasta),
            "phylip" | "phy" => Ok(AlignmentFormat::Phylip),
            "tokens" | "tok" => Ok(AlignmentFormat::Tokens),
            other => Err(Error::InvalidArgument(format!("unknown alignment format `{other}`"))),
        }
    }
}

const A: u64 = 1;
const C: u64 = 2;
const G: u64 = 4;
const T: u64 = 8;

/// State set of an IUPAC nucleotide code.
pub fn iupac_mask(ch: char) -> Option<u64> {
    Some(match ch.to_ascii_uppercase() {
        'A' => A,
        'C' => C,
        'G' => G,
        'T' | 'U' => T,
        'R' => A | G,
        'Y' => C | T,
        'S' => C | G,
        'W' => A | T,
        'K' => G | T,
        'M' => A | C,
        'B' => C | G | T,
        'D' => A | G | T,
        'H' => A | C | T,
        'V' => A | C | G,
        'N' | '-' | '?' | 'X' | '.' => A | C | G | T,
        _ => return None,
    })
}

pub fn iupac_char(mask: u64) -> char {
    const TABLE: [char; 16] = ['N', 'A', 'C', 'M', 'G', 'R', 'S', 'V', 'T', 'W', 'Y', 'H', 'K', 'D', 'B', 'N'];
    TABLE[(mask & 0xF) as usize]
}

fn rows_to_alignment(rows: Vec<(String, Vec<u64>)>, m: usize) -> Result<Alignment> {
    let len = rows.first().map_or(0, |r| r.1.len());
    if let Some((name, seq)) = rows.iter().find(|r| r.1.len() != len) {
        return Err(Error::Alignment(format!(
            "sequence `{name}` has length {}, expected {len}",
            seq.len()
        )));
    }
    let names: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    let columns = (0..len)
        .map(|i| TipData::from_masks(rows.iter().map(|r| r.1[i]).collect(), m))
        .collect::<Result<Vec<_>>>()?;
    Alignment::new(names, m, columns)
}

fn dna_row(name: &str, seq: &str) -> Result<Vec<u64>> {
    seq.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| iupac_mask(c).ok_or_else(|| Error::Alignment(format!("unknown character `{c}` in `{name}`"))))
        .collect()
}

pub fn parse_fasta(text: &str) -> Result<Alignment> {
    let mut rows: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let name = header.split_whitespace().next().unwrap_or("").to_string();
            if name.is_empty() {
                return Err(Error::Alignment("FASTA record without a name".into()));
            }
            rows.push((name, String::new()));
        } else {
            match rows.last_mut() {
                Some(row) => row.1.push_str(line),
                None => return Err(Error::Alignment("sequence data before the first `>` header".into())),
            }
        }
    }
    let rows = rows
        .into_iter()
        .map(|(name, seq)| dna_row(&name, &seq).map(|r| (name, r)))
        .collect::<Result<Vec<_>>>()?;
    rows_to_alignment(rows, 4)
}

/// Relaxed PHYLIP: header `ntax nchar`, then sequential rows `name seq...`
/// with whitespace-delimited names. Interleaved blocks following the first
/// `ntax` rows are appended in order.
pub fn parse_phylip(text: &str) -> Result<Alignment> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::Alignment("empty PHYLIP input".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .take(2)
        .map(|t| t.parse().map_err(|_| Error::Alignment(format!("bad PHYLIP header `{header}`"))))
        .collect::<Result<_>>()?;
    let [ntax, nchar] = dims[..] else {
        return Err(Error::Alignment(format!("bad PHYLIP header `{header}`")));
    };
    let mut rows: Vec<(String, String)> = Vec::with_capacity(ntax);
    for (k, line) in lines.enumerate() {
        if k < ntax {
            let mut parts = line.splitn(2, char::is_whitespace);
            let name = parts.next().unwrap_or_default().to_string();
            rows.push((name, parts.next().unwrap_or("").to_string()));
        } else {
            rows[k % ntax].1.push_str(line);
        }
    }
    if rows.len() != ntax {
        return Err(Error::Alignment(format!("expected {ntax} taxa, found {}", rows.len())));
    }
    let rows = rows
        .into_iter()
        .map(|(name, seq)| dna_row(&name, &seq).map(|r| (name, r)))
        .collect::<Result<Vec<_>>>()?;
    if let Some((name, r)) = rows.iter().find(|r| r.1.len() != nchar) {
        return Err(Error::Alignment(format!("sequence `{name}` has length {}, header says {nchar}", r.len())));
    }
    rows_to_alignment(rows, 4)
}

pub fn parse_tokens(text: &str) -> Result<Alignment> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::Alignment("empty token input".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Alignment(format!("bad token header `{header}`"))))
        .collect::<Result<_>>()?;
    let [ntax, nchar, m] = dims[..] else {
        return Err(Error::Alignment(format!("token header must be `ntax nchar nstates`, got `{header}`")));
    };
    if !(2..=64).contains(&m) {
        return Err(Error::Alignment(format!("state count {m} outside 2..=64")));
    }
    let mut rows = Vec::with_capacity(ntax);
    for line in lines {
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or_default().to_string();
        let row = parts
            .map(|tok| parse_token(tok, m).ok_or_else(|| Error::Alignment(format!("bad token `{tok}` in `{name}`"))))
            .collect::<Result<Vec<u64>>>()?;
        if row.len() != nchar {
            return Err(Error::Alignment(format!("taxon `{name}` has {} tokens, header says {nchar}", row.len())));
        }
        rows.push((name, row));
    }
    if rows.len() != ntax {
        return Err(Error::Alignment(format!("expected {ntax} taxa, found {}", rows.len())));
    }
    rows_to_alignment(rows, m)
}

fn parse_token(tok: &str, m: usize) -> Option<u64> {
    if tok == "?" || tok == "-" {
        return Some(full_mask(m));
    }
    let mut mask = 0u64;
    for part in tok.split('/') {
        let s: usize = part.parse().ok()?;
        if s >= m {
            return None;
        }
        mask |= 1 << s;
    }
    Some(mask)
}

fn format_token(mask: u64, m: usize) -> String {
    if mask == full_mask(m) {
        return "?".into();
    }
    (0..m).filter(|s| mask >> s & 1 == 1).map(|s| s.to_string()).collect::<Vec<_>>().join("/")
}

fn dna_sequence(aln: &Alignment, k: usize) -> String {
    aln.columns.iter().map(|c| iupac_char(c.mask(k))).collect()
}

pub fn format_alignment(aln: &Alignment, format: AlignmentFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        AlignmentFormat::Fasta | AlignmentFormat::Phylip if aln.m != 4 => {
            return Err(Error::Alignment(format!(
                "{} states cannot be written as nucleotides; use the token format",
                aln.m
            )));
        }
        AlignmentFormat::Fasta => {
            for (k, name) in aln.names.iter().enumerate() {
                let seq = dna_sequence(aln, k);
                writeln!(out, ">{name}").unwrap();
                for chunk in seq.as_bytes().chunks(70) {
                    writeln!(out, "{}", std::str::from_utf8(chunk).unwrap()).unwrap();
                }
                if seq.is_empty() {
                    out.push('\n');
                }
            }
        }
        AlignmentFormat::Phylip => {
            writeln!(out, "{} {}", aln.n_taxa(), aln.len()).unwrap();
            for (k, name) in aln.names.iter().enumerate() {
                writeln!(out, "{name} {}", dna_sequence(aln, k)).unwrap();
            }
        }
        AlignmentFormat::Tokens => {
            writeln!(out, "{} {} {}", aln.n_taxa(), aln.len(), aln.m).unwrap();
            for (k, name) in aln.names.iter().enumerate() {
                out.push_str(name);
                for c in &aln.columns {
                    out.push(' ');
                    out.push_str(&format_token(c.mask(k), aln.m));
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn parse_alignment(text: &str, format: AlignmentFormat) -> Result<Alignment> {
    match format {
        AlignmentFormat::Fasta => parse_fasta(text),
        AlignmentFormat::Phylip => parse_phylip(text),
        AlignmentFormat::Tokens => parse_tokens(text),
    }
}

pub fn read_alignment(path: &Path, format: AlignmentFormat) -> Result<Alignment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignment(&text, format)
}

pub fn write_alignment(aln: &Alignment, path: &Path, format: AlignmentFormat) -> Result<()> {
    std::fs::write(path, format_alignment(aln, format)?).map_err(|e| Error::io(path, e))?;
    Ok(())
}
