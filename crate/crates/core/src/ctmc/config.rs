//! Key-value model configuration files.
//!
//! ```text
//! # GTR with a transition-count label
//! m = 4
//! exchangeabilities = 1.2 3.9 0.8 1.1 4.3 1.0
//! base_freqs = 0.3, 0.2, 0.22, 0.28
//! normalize = true
//! label_kind = count
//! label_pairs = 0>2 2>0 1>3 3>1
//! ```
//!
//! Lists are separated by commas or whitespace. States are 0-based.
//! `label_pairs = all` selects every substitution; `state_mask` takes one
//! 0/1 flag per state. Missing keys default to a normalized Jukes–Cantor
//! model counting all substitutions.

use std::fmt;
use std::path::Path;

use super::label::SummaryLabel;
use super::model::{build_reversible, RateModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Count,
    Dwelling,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairSpec {
    All,
    Pairs(Vec<(usize, usize)>),
}

/// Parsed model configuration. Unset rate fields take uniform defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub m: usize,
    pub exchangeabilities: Option<Vec<f64>>,
    pub base_freqs: Option<Vec<f64>>,
    pub normalize: bool,
    pub label_kind: LabelKind,
    pub label_pairs: PairSpec,
    pub state_mask: Option<Vec<bool>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            m: 4,
            exchangeabilities: None,
            base_freqs: None,
            normalize: true,
            label_kind: LabelKind::Count,
            label_pairs: PairSpec::All,
            state_mask: None,
        }
    }
}

pub const MODEL_KEYS: [&str; 7] =
    ["m", "exchangeabilities", "base_freqs", "normalize", "label_kind", "label_pairs", "state_mask"];

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty())
}

fn numbers(value: &str) -> std::result::Result<Vec<f64>, String> {
    list(value).map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))).collect()
}

fn pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once('>').ok_or_else(|| format!("`{s}` is not a pair of the form i>j"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("`{x}` is not a state index"));
    Ok((parse(a)?, parse(b)?))
}

impl ModelConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_inner(key, value.trim()).map_err(|msg| Error::ModelFile { line: 0, msg: format!("{key}: {msg}") })
    }

    fn set_inner(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "m" => self.m = value.parse().map_err(|_| format!("`{value}` is not a state count"))?,
            "exchangeabilities" => self.exchangeabilities = Some(numbers(value)?),
            "base_freqs" => self.base_freqs = Some(numbers(value)?),
            "normalize" => {
                self.normalize = match value.to_ascii_lowercase().as_str() {
                    "true" | "yes" | "1" => true,
                    "false" | "no" | "0" => false,
                    _ => return Err(format!("`{value}` is not a boolean")),
                }
            }
            "label_kind" => {
                self.label_kind = match value.to_ascii_lowercase().as_str() {
                    "count" | "counts" => LabelKind::Count,
                    "dwelling" | "dwell" => LabelKind::Dwelling,
                    _ => return Err(format!("`{value}` is not `count` or `dwelling`")),
                }
            }
            "label_pairs" => {
                self.label_pairs = if value.eq_ignore_ascii_case("all") {
                    PairSpec::All
                } else {
                    PairSpec::Pairs(list(value).map(pair).collect::<std::result::Result<_, _>>()?)
                }
            }
            "state_mask" => {
                self.state_mask = Some(
                    list(value)
                        .map(|s| match s {
                            "1" => Ok(true),
                            "0" => Ok(false),
                            _ => Err(format!("`{s}` is not 0 or 1")),
                        })
                        .collect::<std::result::Result<_, _>>()?,
                )
            }
            _ => return Err(format!("unknown key (expected one of {})", MODEL_KEYS.join(", "))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::ModelFile { line: k + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let key = key.trim();
            cfg.set_inner(key, value.trim()).map_err(|msg| err(format!("{key}: {msg}")))?;
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn model(&self) -> Result<RateModel> {
        let m = self.m;
        let r = self.exchangeabilities.clone().unwrap_or_else(|| vec![1.0; m * m.saturating_sub(1) / 2]);
        let pi = self.base_freqs.clone().unwrap_or_else(|| vec![1.0 / m as f64; m]);
        build_reversible(m, &r, &pi, self.normalize)
    }

    pub fn label(&self) -> Result<SummaryLabel> {
        let label = match self.label_kind {
            LabelKind::Count => match &self.label_pairs {
                PairSpec::All => SummaryLabel::all_substitutions(self.m),
                PairSpec::Pairs(p) => SummaryLabel::substitutions(p.clone()),
            },
            LabelKind::Dwelling => SummaryLabel::dwelling(
                self.state_mask
                    .clone()
                    .ok_or_else(|| Error::InvalidLabel("dwelling-time label needs `state_mask`".into()))?,
            ),
        };
        label.validate(self.m)?;
        Ok(label)
    }
}

impl fmt::Display for ModelConfig {
    /// Writes the configuration back in file syntax.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(f, "m = {}", self.m)?;
        if let Some(r) = &self.exchangeabilities {
            writeln!(f, "exchangeabilities = {}", join(r))?;
        }
        if let Some(p) = &self.base_freqs {
            writeln!(f, "base_freqs = {}", join(p))?;
        }
        writeln!(f, "normalize = {}", self.normalize)?;
        match self.label_kind {
            LabelKind::Count => {
                writeln!(f, "label_kind = count")?;
                match &self.label_pairs {
                    PairSpec::All => writeln!(f, "label_pairs = all"),
                    PairSpec::Pairs(p) => {
                        let s: Vec<String> = p.iter().map(|(i, j)| format!("{i}>{j}")).collect();
                        writeln!(f, "label_pairs = {}", s.join(" "))
                    }
                }
            }
            LabelKind::Dwelling => {
                writeln!(f, "label_kind = dwelling")?;
                let mask = self.state_mask.as_deref().unwrap_or(&[]);
                let s: Vec<&str> = mask.iter().map(|&b| if b { "1" } else { "0" }).collect();
                writeln!(f, "state_mask = {}", s.join(" "))
            }
        }
    }
}
