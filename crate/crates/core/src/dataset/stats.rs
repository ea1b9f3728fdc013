use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seeded_rng;

/// Seed for the frequency tie-break when callers do not supply one.
pub const DEFAULT_TIE_SEED: u64 = 0x7a11;

const TIE_STREAM: u64 = 11;

/// Empirical label prevalences of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub num_instances: usize,
    pub freq: Vec<f64>,
    pub positive_counts: Vec<usize>,
    /// Labels sorted by non-decreasing frequency; equal counts are ordered
    /// by a seeded shuffle.
    pub ascending_order: Vec<usize>,
}

impl LabelStats {
    pub fn compute(ds: &Dataset) -> Result<Self> {
        Self::compute_with_seed(ds, DEFAULT_TIE_SEED)
    }

    pub fn compute_with_seed(ds: &Dataset, tie_seed: u64) -> Result<Self> {
        let m = ds.num_instances();
        if m == 0 {
            return Err(Error::EmptyDataset);
        }
        let l = ds.num_labels();
        let mut counts = vec![0usize; l];
        for r in 0..m {
            for (c, &y) in ds.labels().row(r).iter().enumerate() {
                if y {
                    counts[c] += 1;
                }
            }
        }
        Ok(Self::from_counts(counts, m, tie_seed))
    }

    pub fn from_counts(positive_counts: Vec<usize>, num_instances: usize, tie_seed: u64) -> Self {
        let freq = positive_counts.iter().map(|&c| c as f64 / num_instances as f64).collect();
        let l = positive_counts.len();
        let mut shuffled: Vec<usize> = (0..l).collect();
        shuffled.shuffle(&mut seeded_rng(tie_seed, TIE_STREAM));
        let mut key = vec![0usize; l];
        for (pos, &lab) in shuffled.iter().enumerate() {
            key[lab] = pos;
        }
        let mut ascending_order: Vec<usize> = (0..l).collect();
        ascending_order.sort_by_key(|&lab| (positive_counts[lab], key[lab], lab));
        LabelStats { num_instances, freq, positive_counts, ascending_order }
    }

    pub fn num_labels(&self) -> usize {
        self.freq.len()
    }

    /// `label,freq,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,freq,count\n");
        for (l, (f, c)) in self.freq.iter().zip(&self.positive_counts).enumerate() {
            s.push_str(&format!("{l},{f},{c}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMode {
    /// The `floor(qL)` least frequent labels form the tail.
    BottomFraction,
    /// The head is the shortest prefix of the descending-frequency order that
    /// carries a fraction `q` of the total frequency mass.
    CumulativeFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSet {
    /// Ascending label ids.
    pub tail_labels: Vec<usize>,
    pub head_labels: Vec<usize>,
    pub tail_fraction: f64,
    pub mode: TailMode,
}

impl TailSet {
    pub fn num_labels(&self) -> usize {
        self.tail_labels.len() + self.head_labels.len()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.num_labels()];
        for &l in &self.tail_labels {
            m[l] = true;
        }
        m
    }

    pub fn contains(&self, label: usize) -> bool {
        self.tail_labels.binary_search(&label).is_ok()
    }
}

/// `floor(q * n)` with a small tolerance so that products like `0.29 * 100`
/// floor to the intended integer.
pub(crate) fn floor_fraction(q: f64, n: usize) -> usize {
    (q * n as f64 + 1e-9).floor() as usize
}

pub fn split_head_tail(stats: &LabelStats, q: f64, mode: TailMode) -> Result<TailSet> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::config(format!("tail fraction must lie in (0, 1), got {q}")));
    }
    let l = stats.num_labels();
    let mut tail = match mode {
        TailMode::BottomFraction => {
            let k = floor_fraction(q, l);
            if k == 0 {
                return Err(Error::DegenerateTail(format!("floor({q} * {l}) = 0")));
            }
            stats.ascending_order[..k].to_vec()
        }
        TailMode::CumulativeFrequency => {
            let total: f64 = stats.freq.iter().sum();
            if total <= 0.0 {
                return Err(Error::DegenerateTail("no label has positive frequency".into()));
            }
            let mut acc = 0.0;
            let mut head_len = l;
            for (k, &lab) in stats.ascending_order.iter().rev().enumerate() {
                acc += stats.freq[lab];
                if acc / total >= q {
                    head_len = k + 1;
                    break;
                }
            }
            let tail: Vec<usize> = stats.ascending_order[..l - head_len].to_vec();
            if tail.is_empty() {
                return Err(Error::DegenerateTail("head prefix covers every label".into()));
            }
            tail
        }
    };
    tail.sort_unstable();
    let head: Vec<usize> = (0..l).filter(|x| tail.binary_search(x).is_err()).collect();
    Ok(TailSet { tail_labels: tail, head_labels: head, tail_fraction: q, mode })
}
