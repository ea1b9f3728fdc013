use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stats::floor_fraction;
use super::{split_head_tail, Dataset, LabelStats, TailMode, TailSet};
use crate::error::{Error, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RareSplitConfig {
    pub severity: f64,
    pub tail_fraction: f64,
    pub seed: u64,
}

impl Default for RareSplitConfig {
    fn default() -> Self {
        RareSplitConfig { severity: 0.3, tail_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct RareVariant {
    pub dataset: Dataset,
    /// `flipped / P_l` for tail labels, 0 elsewhere.
    pub achieved_ratios: Vec<f64>,
    pub flipped: Vec<usize>,
    pub tail: TailSet,
    /// Tail labels with no positives; nothing was flipped for them.
    pub skipped_labels: Vec<usize>,
}

/// Removes `floor(severity * P_l)` positives from every tail label, chosen
/// uniformly without replacement. Only the selected `(instance, label)`
/// entries change; instances and all other labels are untouched.
pub fn make_rare_variant(ds: &Dataset, cfg: &RareSplitConfig) -> Result<RareVariant> {
    if !(cfg.severity > 0.0 && cfg.severity < 1.0) {
        return Err(Error::config(format!("severity must lie in (0, 1), got {}", cfg.severity)));
    }
    let stats = LabelStats::compute_with_seed(ds, cfg.seed)?;
    let tail = split_head_tail(&stats, cfg.tail_fraction, TailMode::BottomFraction)?;
    let mut labels = ds.labels().clone();
    let l = ds.num_labels();
    let mut achieved = vec![0.0; l];
    let mut flipped = vec![0usize; l];
    let mut skipped = Vec::new();
    for &lab in &tail.tail_labels {
        let pool: Vec<usize> = (0..ds.num_instances()).filter(|&m| labels.get(m, lab)).collect();
        if pool.is_empty() {
            skipped.push(lab);
            continue;
        }
        let k = floor_fraction(cfg.severity, pool.len());
        let mut rng = seeded_rng(cfg.seed, 1000 + lab as u64);
        for pick in rand::seq::index::sample(&mut rng, pool.len(), k) {
            labels.set(pool[pick], lab, false);
        }
        flipped[lab] = k;
        achieved[lab] = k as f64 / pool.len() as f64;
    }
    Ok(RareVariant {
        dataset: ds.with_labels(labels),
        achieved_ratios: achieved,
        flipped,
        tail,
        skipped_labels: skipped,
    })
}

/// Independently drops each positive label entry with probability `rho`.
pub fn flip_label_noise(ds: &Dataset, rho: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config(format!("flip probability must lie in [0, 1], got {rho}")));
    }
    let mut labels = ds.labels().clone();
    let mut rng = seeded_rng(seed, 2);
    for m in 0..labels.rows() {
        for c in 0..labels.cols() {
            if labels.get(m, c) && rng.random::<f64>() < rho {
                labels.set(m, c, false);
            }
        }
    }
    Ok(ds.with_labels(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabelMatrix, SparseFeatures};

    fn fixture(counts: &[usize], m: usize) -> Dataset {
        let mut labels = LabelMatrix::zeros(m, counts.len());
        for (c, &k) in counts.iter().enumerate() {
            for r in 0..k {
                labels.set((r * 7 + c) % m, c, true);
            }
        }
        let mut f = SparseFeatures::empty(2);
        for r in 0..m {
            f.push_row(&[(0, r as f64)]).unwrap();
        }
        Dataset::new("fx", f, labels).unwrap()
    }

    #[test]
    fn flips_floor_of_severity() {
        // label 0 is the unique rarest with 10 positives
        let ds = fixture(&[10, 30, 30, 30, 30], 40);
        let cfg = RareSplitConfig { severity: 0.3, tail_fraction: 0.2, seed: 5 };
        let v = make_rare_variant(&ds, &cfg).unwrap();
        assert_eq!(v.tail.tail_labels, vec![0]);
        assert_eq!(v.flipped[0], 3);
        assert!((v.achieved_ratios[0] - 0.3).abs() < 1e-15);
        assert_eq!(v.dataset.labels().column_count(0), 7);
        for c in 1..5 {
            assert_eq!(v.achieved_ratios[c], 0.0);
            assert_eq!(v.dataset.labels().column_count(c), 30);
        }
    }

    #[test]
    fn single_positive_floors_to_zero() {
        let ds = fixture(&[1, 5, 5, 5, 5], 10);
        let v = make_rare_variant(&ds, &RareSplitConfig { severity: 0.5, tail_fraction: 0.2, seed: 0 }).unwrap();
        assert_eq!(v.flipped[0], 0);
        assert_eq!(v.dataset.labels(), ds.labels());
    }

    #[test]
    fn zero_positive_tail_label_is_skipped() {
        let ds = fixture(&[0, 5, 5, 5, 5], 10);
        let v = make_rare_variant(&ds, &RareSplitConfig { severity: 0.5, tail_fraction: 0.2, seed: 0 }).unwrap();
        assert_eq!(v.skipped_labels, vec![0]);
    }

    #[test]
    fn same_seed_same_output() {
        let ds = fixture(&[12, 14, 30, 30, 30, 31, 32, 33, 34, 35], 60);
        let cfg = RareSplitConfig { severity: 0.4, tail_fraction: 0.2, seed: 9 };
        let a = make_rare_variant(&ds, &cfg).unwrap();
        let b = make_rare_variant(&ds, &cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn noise_extremes() {
        let ds = fixture(&[10, 20, 5], 30);
        assert_eq!(flip_label_noise(&ds, 0.0, 1).unwrap(), ds);
        assert_eq!(flip_label_noise(&ds, 1.0, 1).unwrap().labels().count_ones(), 0);
        assert!(flip_label_noise(&ds, 1.5, 1).is_err());
    }

    #[test]
    fn noise_count_within_binomial_band() {
        let mut labels = LabelMatrix::zeros(1000, 1);
        let mut f = SparseFeatures::empty(1);
        for r in 0..1000 {
            labels.set(r, 0, true);
            f.push_row(&[]).unwrap();
        }
        let ds = Dataset::new("ones", f, labels).unwrap();
        let out = flip_label_noise(&ds, 0.3, 42).unwrap();
        let flipped = 1000 - out.labels().count_ones();
        let sd = (1000.0f64 * 0.3 * 0.7).sqrt();
        assert!((flipped as f64 - 300.0).abs() <= 3.0 * sd, "flipped {flipped}");
    }
}
