//! Desk-scale long-tailed multi-label data.
//!
//! Instances are standard Gaussian vectors. Each label owns a random unit
//! direction; its score is the projection plus Gaussian noise and the
//! top `round(pi_l * M)` scores become positives, so empirical prevalences
//! follow the power-law targets exactly up to rounding.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabelMatrix, SparseFeatures};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub num_instances: usize,
    pub num_features: usize,
    pub exponent: f64,
    pub pi_min: f64,
    pub pi_max: f64,
    /// Standard deviation of the score noise (signal has unit variance).
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(num_labels: usize, num_instances: usize, num_features: usize, exponent: f64, seed: u64) -> Self {
        SynthConfig {
            num_labels,
            num_instances,
            num_features,
            exponent,
            pi_min: 0.01,
            pi_max: 0.4,
            noise: 0.5,
            seed,
        }
    }

    /// Power-law prevalences `l^-exponent`, affinely rescaled onto
    /// `[pi_min, pi_max]`.
    pub fn target_prevalences(&self) -> Vec<f64> {
        let raw: Vec<f64> = (1..=self.num_labels).map(|l| (l as f64).powf(-self.exponent)).collect();
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        if hi - lo <= 0.0 {
            return vec![0.5 * (self.pi_min + self.pi_max); self.num_labels];
        }
        raw.iter().map(|r| self.pi_min + (self.pi_max - self.pi_min) * (r - lo) / (hi - lo)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.num_labels == 0 || self.num_instances == 0 || self.num_features == 0 {
            return Err(Error::config("labels, instances and features must all be >= 1"));
        }
        if !(self.exponent >= 0.0 && self.exponent.is_finite()) {
            return Err(Error::config(format!("power-law exponent must be >= 0, got {}", self.exponent)));
        }
        if !(self.pi_min > 0.0 && self.pi_min <= self.pi_max && self.pi_max < 1.0) {
            return Err(Error::config(format!(
                "infeasible prevalence range [{}, {}]; need 0 < pi_min <= pi_max < 1",
                self.pi_min, self.pi_max
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise must be a finite non-negative number"));
        }
        Ok(())
    }
}

pub fn generate_synthetic_longtail(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (l, m, d) = (cfg.num_labels, cfg.num_instances, cfg.num_features);

    let mut dir_rng = seeded_rng(cfg.seed, 20);
    let mut dirs = Matrix::zeros(l, d);
    for k in 0..l {
        let row = dirs.row_mut(k);
        for v in row.iter_mut() {
            *v = dir_rng.sample(StandardNormal);
        }
        let n = crate::linalg::l2_norm(row).max(1e-12);
        row.iter_mut().for_each(|v| *v /= n);
    }

    let mut x_rng = seeded_rng(cfg.seed, 21);
    let mut x = Matrix::zeros(m, d);
    for v in x.as_mut_slice() {
        *v = x_rng.sample(StandardNormal);
    }

    let mut noise_rng = seeded_rng(cfg.seed, 22);
    let pis = cfg.target_prevalences();
    let mut labels = LabelMatrix::zeros(m, l);
    for (k, &pi) in pis.iter().enumerate() {
        let mut scores: Vec<(f64, usize)> = (0..m)
            .map(|r| {
                let e: f64 = noise_rng.sample(StandardNormal);
                (crate::linalg::dot(x.row(r), dirs.row(k)) + cfg.noise * e, r)
            })
            .collect();
        scores.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let count = ((pi * m as f64).round() as usize).min(m);
        for &(_, r) in &scores[..count] {
            labels.set(r, k, true);
        }
    }
    let name = format!("synth-L{l}-M{m}-a{}-s{}", cfg.exponent, cfg.seed);
    Dataset::new(name, SparseFeatures::from_dense(&x), labels)
}
