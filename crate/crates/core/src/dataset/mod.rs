//! Multi-label datasets: sparse instance features with a dense binary label
//! matrix, plus the tooling that loads, synthesizes, corrupts and summarizes
//! them.

mod corrupt;
mod stats;
mod svmlight;
mod synth;

pub use corrupt::{flip_label_noise, make_rare_variant, RareSplitConfig, RareVariant};
pub use stats::{split_head_tail, LabelStats, TailMode, TailSet, DEFAULT_TIE_SEED};
pub use svmlight::{parse_multilabel_svmlight, write_multilabel_svmlight, ParseOptions};
pub use synth::{generate_synthetic_longtail, SynthConfig};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    num_features: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseFeatures {
    pub fn empty(num_features: usize) -> Self {
        SparseFeatures { num_features, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends a row; indices must be `< num_features` and unique.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) -> Result<()> {
        for &(j, v) in entries {
            if j >= self.num_features {
                return Err(Error::dim(format!(
                    "feature index {j} out of range for {} features",
                    self.num_features
                )));
            }
            self.indices.push(j);
            self.values.push(v);
        }
        self.indptr.push(self.indices.len());
        Ok(())
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let mut s = SparseFeatures::empty(m.cols());
        for r in 0..m.rows() {
            for (j, &v) in m.row(r).iter().enumerate() {
                if v != 0.0 {
                    s.indices.push(j);
                    s.values.push(v);
                }
            }
            s.indptr.push(s.indices.len());
        }
        s
    }

    pub fn num_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }
}

/// Dense `M x L` binary label matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl LabelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        LabelMatrix { rows, cols, data: vec![false; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged label rows");
            data.extend_from_slice(r);
        }
        LabelMatrix { rows: rows.len(), cols, data }
    }

    /// Builds from 0/1 integers; any nonzero counts as positive.
    pub fn from_u8_rows(rows: &[Vec<u8>]) -> Self {
        let b: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|&v| v != 0).collect()).collect();
        LabelMatrix::from_rows(&b)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column_count(&self, c: usize) -> usize {
        (0..self.rows).filter(|&r| self.get(r, c)).count()
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabelMatrix {
        let mut out = LabelMatrix::zeros(idx.len(), self.cols);
        for (k, &r) in idx.iter().enumerate() {
            out.data[k * self.cols..(k + 1) * self.cols].copy_from_slice(self.row(r));
        }
        out
    }

    /// Labels as 0.0 / 1.0 in a dense matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&b| f64::from(u8::from(b))).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: SparseFeatures,
    labels: LabelMatrix,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: SparseFeatures, labels: LabelMatrix) -> Result<Self> {
        if features.num_rows() != labels.rows() {
            return Err(Error::dim(format!(
                "{} feature rows but {} label rows",
                features.num_rows(),
                labels.rows()
            )));
        }
        Ok(Dataset { name: name.into(), features, labels })
    }

    pub fn num_instances(&self) -> usize {
        self.labels.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.num_features()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.cols()
    }

    pub fn features(&self) -> &SparseFeatures {
        &self.features
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub(crate) fn with_labels(&self, labels: LabelMatrix) -> Dataset {
        debug_assert_eq!(labels.rows(), self.labels.rows());
        debug_assert_eq!(labels.cols(), self.labels.cols());
        Dataset { name: self.name.clone(), features: self.features.clone(), labels }
    }

    /// Densifies the features of the given rows.
    pub fn dense_rows(&self, rows: &[usize]) -> Matrix {
        let d = self.num_features();
        let mut x = Matrix::zeros(rows.len(), d);
        for (k, &r) in rows.iter().enumerate() {
            let (idx, val) = self.features.row(r);
            let out = x.row_mut(k);
            for (&j, &v) in idx.iter().zip(val) {
                out[j] = v;
            }
        }
        x
    }

    pub fn dense_features(&self) -> Matrix {
        let all: Vec<usize> = (0..self.num_instances()).collect();
        self.dense_rows(&all)
    }

    /// SHA-256 of shape, labels and features, hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in [self.num_instances(), self.num_features(), self.num_labels()] {
            h.update((v as u64).to_le_bytes());
        }
        for r in 0..self.num_instances() {
            for (c, &v) in self.labels.row(r).iter().enumerate() {
                if v {
                    h.update((c as u64).to_le_bytes());
                }
            }
            h.update(u64::MAX.to_le_bytes());
            let (idx, val) = self.features.row(r);
            for (&j, &v) in idx.iter().zip(val) {
                h.update((j as u64).to_le_bytes());
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(u64::MAX.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    /// Row subset, preserving order of `rows`.
    pub fn subset(&self, rows: &[usize], name: impl Into<String>) -> Dataset {
        let mut f = SparseFeatures::empty(self.num_features());
        for &r in rows {
            let (idx, val) = self.features.row(r);
            f.indices.extend_from_slice(idx);
            f.values.extend_from_slice(val);
            f.indptr.push(f.indices.len());
        }
        Dataset { name: name.into(), features: f, labels: self.labels.select_rows(rows) }
    }
}
