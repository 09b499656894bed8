use crate::error::{Error, Result};

/// Observed states at the tips for one alignment column.
///
/// Each tip carries a bitmask over the `m <= 64` states: a single bit for
/// an observed state, several for an ambiguity code, all `m` for missing
/// data. Entries follow the tree's tip order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TipData {
    m: usize,
    masks: Vec<u64>,
}

pub(crate) fn full_mask(m: usize) -> u64 {
    if m == 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

impl TipData {
    pub fn from_masks(masks: Vec<u64>, m: usize) -> Result<Self> {
        if !(2..=64).contains(&m) {
            return Err(Error::InvalidArgument(format!("tip data support 2..=64 states, got {m}")));
        }
        let full = full_mask(m);
        for (k, &mask) in masks.iter().enumerate() {
            if mask == 0 {
                return Err(Error::InvalidArgument(format!("tip {k} has an empty state set")));
            }
            if mask & !full != 0 {
                return Err(Error::InvalidArgument(format!("tip {k} has a state outside 0..{m}")));
            }
        }
        Ok(TipData { m, masks })
    }

    pub fn from_states(states: &[usize], m: usize) -> Result<Self> {
        if let Some(&bad) = states.iter().find(|&&s| s >= m) {
            return Err(Error::InvalidArgument(format!("state {bad} outside 0..{m}")));
        }
        TipData::from_masks(states.iter().map(|&s| 1u64 << s).collect(), m)
    }

    /// All tips missing: the initialization used for prior moments.
    pub fn missing(n_tips: usize, m: usize) -> Self {
        TipData { m, masks: vec![full_mask(m); n_tips] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_tips(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[u64] {
        &self.masks
    }

    pub fn mask(&self, tip: usize) -> u64 {
        self.masks[tip]
    }

    pub fn allows(&self, tip: usize, state: usize) -> bool {
        self.masks[tip] >> state & 1 == 1
    }

    /// The observed state if the tip is unambiguous.
    pub fn state(&self, tip: usize) -> Option<usize> {
        let mask = self.masks[tip];
        (mask.count_ones() == 1).then(|| mask.trailing_zeros() as usize)
    }

    pub fn is_missing(&self, tip: usize) -> bool {
        self.masks[tip] == full_mask(self.m)
    }

    /// Writes the 0/1 indicator of the tip's state set into `out`.
    pub fn write_indicator(&self, tip: usize, out: &mut [f64]) {
        let mask = self.masks[tip];
        for (s, x) in out.iter_mut().enumerate() {
            *x = (mask >> s & 1) as f64;
        }
    }

    /// Same states, tips permuted so that new tip `k` is old tip `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> TipData {
        TipData { m: self.m, masks: order.iter().map(|&k| self.masks[k]).collect() }
    }
}
