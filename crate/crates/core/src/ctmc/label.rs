use nalgebra::DMatrix;

use super::model::RateModel;
use crate::error::{Error, Result};

/// Additive per-branch summary of a substitution history.
#[derive(Debug, Clone, PartialEq)]
pub enum SummaryLabel {
    /// Number of jumps `i -> j` with `(i, j)` in the label set.
    SubstitutionCount { pairs: Vec<(usize, usize)> },
    /// Time spent in states with `mask[i] == true`.
    DwellingTime { mask: Vec<bool> },
}

impl SummaryLabel {
    /// Every off-diagonal pair: the total number of substitutions.
    pub fn all_substitutions(m: usize) -> Self {
        let pairs = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        SummaryLabel::SubstitutionCount { pairs }
    }

    pub fn substitutions(pairs: Vec<(usize, usize)>) -> Self {
        SummaryLabel::SubstitutionCount { pairs }
    }

    pub fn dwelling(mask: Vec<bool>) -> Self {
        SummaryLabel::DwellingTime { mask }
    }

    pub fn is_count(&self) -> bool {
        matches!(self, SummaryLabel::SubstitutionCount { .. })
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            SummaryLabel::SubstitutionCount { pairs } => {
                let mut seen = vec![false; m * m];
                for &(i, j) in pairs {
                    if i >= m || j >= m {
                        return Err(Error::InvalidLabel(format!("pair ({i},{j}) outside {m} states")));
                    }
                    if i == j {
                        return Err(Error::InvalidLabel(format!("diagonal pair ({i},{i})")));
                    }
                    if std::mem::replace(&mut seen[i * m + j], true) {
                        return Err(Error::InvalidLabel(format!("duplicate pair ({i},{j})")));
                    }
                }
                Ok(())
            }
            SummaryLabel::DwellingTime { mask } => {
                if mask.len() != m {
                    return Err(Error::InvalidLabel(format!(
                        "state mask has length {}, model has {m} states",
                        mask.len()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Per-jump and per-unit-time weights of the summary: for counts the
    /// rate matrix masked to the label set, for dwelling times `diag(w)`.
    pub fn weight_matrix(&self, model: &RateModel) -> Result<DMatrix<f64>> {
        let m = model.m();
        self.validate(m)?;
        let mut b = DMatrix::zeros(m, m);
        match self {
            SummaryLabel::SubstitutionCount { pairs } => {
                for &(i, j) in pairs {
                    b[(i, j)] = model.q()[(i, j)];
                }
            }
            SummaryLabel::DwellingTime { mask } => {
                for (i, &on) in mask.iter().enumerate() {
                    if on {
                        b[(i, i)] = 1.0;
                    }
                }
            }
        }
        Ok(b)
    }

    /// Value of the summary for a single jump `from -> to`.
    pub fn jump_weight(&self, from: usize, to: usize) -> f64 {
        match self {
            SummaryLabel::SubstitutionCount { pairs } => {
                if pairs.contains(&(from, to)) {
                    1.0
                } else {
                    0.0
                }
            }
            SummaryLabel::DwellingTime { .. } => 0.0,
        }
    }

    /// Contribution per unit time spent in `state`.
    pub fn dwell_weight(&self, state: usize) -> f64 {
        match self {
            SummaryLabel::DwellingTime { mask } if mask[state] => 1.0,
            _ => 0.0,
        }
    }
}
