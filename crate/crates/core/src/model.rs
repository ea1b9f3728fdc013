//! Forward computation: shared features, per-player posteriors, per-label
//! softmax fusion, clipping and thresholding.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelMatrix;
use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, Matrix};
use crate::partition::Partition;
use crate::seeded_rng;

pub const DEFAULT_EPS: f64 = 1e-4;

const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Sigmoid kept strictly inside `(0, 1)` in floating point.
#[inline]
pub fn posterior(z: f64) -> f64 {
    sigmoid(z).clamp(f64::MIN_POSITIVE, P_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Identity,
    Mlp1,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(BackboneKind::Identity),
            "mlp1" => Ok(BackboneKind::Mlp1),
            _ => Err(Error::config(format!("unknown backbone {s:?} (expected identity or mlp1)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams {
    pub kind: BackboneKind,
    pub input_dim: usize,
    /// `d x d'`; empty for the identity backbone.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl BackboneParams {
    pub fn identity(input_dim: usize) -> Self {
        BackboneParams { kind: BackboneKind::Identity, input_dim, weight: Matrix::zeros(0, 0), bias: Vec::new() }
    }

    pub fn mlp1(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::dim(format!("bias length {} vs {} hidden units", bias.len(), weight.cols())));
        }
        Ok(BackboneParams { kind: BackboneKind::Mlp1, input_dim: weight.rows(), weight, bias })
    }

    pub fn feature_dim(&self) -> usize {
        match self.kind {
            BackboneKind::Identity => self.input_dim,
            BackboneKind::Mlp1 => self.weight.cols(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

/// Returns the pre-activations (mlp1 only) and the features.
pub(crate) fn backbone_pass(bb: &BackboneParams, x: &Matrix) -> Result<(Option<Matrix>, Matrix)> {
    if x.cols() != bb.input_dim {
        return Err(Error::dim(format!("input has {} columns, backbone expects {}", x.cols(), bb.input_dim)));
    }
    match bb.kind {
        BackboneKind::Identity => Ok((None, x.clone())),
        BackboneKind::Mlp1 => {
            let (n, d, h) = (x.rows(), bb.input_dim, bb.weight.cols());
            let mut pre = Matrix::zeros(n, h);
            for r in 0..n {
                let out = pre.row_mut(r);
                out.copy_from_slice(&bb.bias);
                for a in 0..d {
                    let xa = x[(r, a)];
                    if xa != 0.0 {
                        for (o, w) in out.iter_mut().zip(bb.weight.row(a)) {
                            *o += xa * w;
                        }
                    }
                }
            }
            let mut act = pre.clone();
            act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            Ok((Some(pre), act))
        }
    }
}

pub fn forward_backbone(bb: &BackboneParams, x: &Matrix) -> Result<Matrix> {
    Ok(backbone_pass(bb, x)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerHead {
    pub player: usize,
    /// `|L_i| x d'`, rows aligned with the player's ascending label subset.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

pub fn player_logits(head: &PlayerHead, h: &Matrix) -> Result<Matrix> {
    if h.cols() != head.weights.cols() {
        return Err(Error::dim(format!(
            "features have {} columns, head {} expects {}",
            h.cols(),
            head.player,
            head.weights.cols()
        )));
    }
    let k = head.weights.rows();
    let mut z = Matrix::zeros(h.rows(), k);
    for r in 0..h.rows() {
        let hr = h.row(r);
        for c in 0..k {
            z[(r, c)] = dot(hr, head.weights.row(c)) + head.bias[c];
        }
    }
    Ok(z)
}

pub fn player_posteriors(head: &PlayerHead, h: &Matrix) -> Result<Matrix> {
    let mut z = player_logits(head, h)?;
    z.as_mut_slice().iter_mut().for_each(|v| *v = posterior(*v));
    Ok(z)
}

/// One logit per (label, active player), in the order of
/// [`Partition::active_players`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub logits: Vec<Vec<f64>>,
}

impl FusionWeights {
    pub fn uniform(p: &Partition) -> Self {
        FusionWeights { logits: (0..p.num_labels()).map(|l| vec![0.0; p.active_players(l).len()]).collect() }
    }

    /// Softmax over the active players of `label`.
    pub fn weights(&self, label: usize) -> Vec<f64> {
        let a = &self.logits[label];
        let mx = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn num_params(&self) -> usize {
        self.logits.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrediction {
    pub probs: Matrix,
    pub eps: f64,
}

impl FusedPrediction {
    /// Wraps externally produced probabilities, rejecting unclipped input.
    pub fn new(probs: Matrix, eps: f64) -> Result<Self> {
        let fp = FusedPrediction { probs, eps };
        fp.check_clipped()?;
        Ok(fp)
    }

    pub fn check_clipped(&self) -> Result<()> {
        let (lo, hi) = (self.eps, 1.0 - self.eps);
        if self.probs.as_slice().iter().all(|&p| p >= lo && p <= hi) {
            Ok(())
        } else {
            Err(Error::Unclipped { eps: self.eps })
        }
    }

    pub fn rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn cols(&self) -> usize {
        self.probs.cols()
    }
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::config(format!("clip eps must lie in (0, 1/2), got {eps}")))
    }
}

/// Unclipped convex combination of the active players' posteriors.
pub(crate) fn fuse_raw(posts: &[Matrix], w: &FusionWeights, p: &Partition) -> Result<Matrix> {
    if posts.len() != p.num_players() {
        return Err(Error::Partition(format!("{} posterior blocks for {} players", posts.len(), p.num_players())));
    }
    let n = posts.first().map_or(0, Matrix::rows);
    for (i, m) in posts.iter().enumerate() {
        if m.rows() != n || m.cols() != p.subset(i).len() {
            return Err(Error::dim(format!("posteriors of player {i} have shape {:?}", m.shape())));
        }
    }
    let l = p.num_labels();
    let mut out = Matrix::zeros(n, l);
    for lab in 0..l {
        let active = p.active_players(lab);
        if active.is_empty() {
            return Err(Error::Partition(format!("label {lab} has no active player")));
        }
        let omega = w.weights(lab);
        let cols: Vec<usize> = active.iter().map(|&i| p.local_index(i, lab).expect("active implies owned")).collect();
        for r in 0..n {
            let mut acc = 0.0;
            for ((&i, &c), &o) in active.iter().zip(&cols).zip(&omega) {
                acc += o * posts[i][(r, c)];
            }
            out[(r, lab)] = acc;
        }
    }
    Ok(out)
}

pub fn fuse(posts: &[Matrix], w: &FusionWeights, p: &Partition, eps: f64) -> Result<FusedPrediction> {
    check_eps(eps)?;
    let mut m = fuse_raw(posts, w, p)?;
    m.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(eps, 1.0 - eps));
    Ok(FusedPrediction { probs: m, eps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub values: Vec<f64>,
    /// Labels that fell back to 0.5 for lack of validation positives.
    pub fallback: Vec<usize>,
}

impl ThresholdVector {
    pub fn constant(num_labels: usize, tau: f64) -> Self {
        ThresholdVector { values: vec![tau; num_labels], fallback: Vec::new() }
    }

    pub fn validate(&self, eps: f64) -> Result<()> {
        match self.values.iter().position(|&t| !(t > eps && t < 1.0 - eps)) {
            Some(l) => Err(Error::config(format!("threshold {} of label {l} outside ({eps}, 1 - {eps})", self.values[l]))),
            None => Ok(()),
        }
    }
}

/// `y_hat = 1` iff `p_hat > tau` (strict).
pub fn threshold(fp: &FusedPrediction, t: &ThresholdVector) -> Result<LabelMatrix> {
    if t.values.len() != fp.cols() {
        return Err(Error::dim(format!("{} thresholds for {} labels", t.values.len(), fp.cols())));
    }
    let mut out = LabelMatrix::zeros(fp.rows(), fp.cols());
    for r in 0..fp.rows() {
        for (c, &tau) in t.values.iter().enumerate() {
            if fp.probs[(r, c)] > tau {
                out.set(r, c, true);
            }
        }
    }
    Ok(out)
}

fn f1_from_counts(tp: usize, fp: usize, fnn: usize) -> f64 {
    let d = 2 * tp + fp + fnn;
    if d == 0 {
        0.0
    } else {
        2.0 * tp as f64 / d as f64
    }
}

/// Per-label F1-optimal thresholds over midpoints of consecutive distinct
/// validation scores plus 0.5; ties go to the smallest candidate.
pub fn tune_thresholds(fp_val: &FusedPrediction, y_val: &LabelMatrix) -> Result<ThresholdVector> {
    let (n, l) = (fp_val.rows(), fp_val.cols());
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if y_val.rows() != n || y_val.cols() != l {
        return Err(Error::dim("validation labels do not match predictions"));
    }
    let mut values = vec![0.5; l];
    let mut fallback = Vec::new();
    for lab in 0..l {
        let mut col: Vec<(f64, bool)> = (0..n).map(|r| (fp_val.probs[(r, lab)], y_val.get(r, lab))).collect();
        let total_pos = col.iter().filter(|e| e.1).count();
        if total_pos == 0 {
            fallback.push(lab);
            continue;
        }
        let total_neg = n - total_pos;
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cands: Vec<(f64, f64)> = Vec::new();
        let (mut pos_le, mut neg_le) = (0usize, 0usize);
        let mut k = 0;
        while k < n {
            let v = col[k].0;
            while k < n && col[k].0 == v {
                if col[k].1 {
                    pos_le += 1;
                } else {
                    neg_le += 1;
                }
                k += 1;
            }
            if k < n {
                let tau = 0.5 * (v + col[k].0);
                let tp = total_pos - pos_le;
                cands.push((tau, f1_from_counts(tp, total_neg - neg_le, pos_le)));
            }
        }
        let tp = col.iter().filter(|e| e.1 && e.0 > 0.5).count();
        let fp = col.iter().filter(|e| !e.1 && e.0 > 0.5).count();
        cands.push((0.5, f1_from_counts(tp, fp, total_pos - tp)));
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = cands[0];
        for &c in &cands[1..] {
            if c.1 > best.1 {
                best = c;
            }
        }
        values[lab] = best.0;
    }
    Ok(ThresholdVector { values, fallback })
}

/// Everything computed by one shared forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Backbone input, kept only when the backbone has parameters.
    pub input: Option<Matrix>,
    pub pre: Option<Matrix>,
    pub h: Matrix,
    pub logits: Vec<Matrix>,
    pub posts: Vec<Matrix>,
    pub raw: Matrix,
    pub fused: FusedPrediction,
}

impl Forward {
    /// Recomputes player `i` from the cached features and re-fuses.
    pub fn refresh_player(&mut self, model: &ModelState, i: usize) -> Result<()> {
        self.logits[i] = player_logits(&model.heads[i], &self.h)?;
        let mut p = self.logits[i].clone();
        p.as_mut_slice().iter_mut().for_each(|v| *v = posterior(*v));
        self.posts[i] = p;
        self.refuse(model)
    }

    pub fn refuse(&mut self, model: &ModelState) -> Result<()> {
        self.raw = fuse_raw(&self.posts, &model.fusion, &model.partition)?;
        let mut probs = self.raw.clone();
        probs.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(model.eps, 1.0 - model.eps));
        self.fused = FusedPrediction { probs, eps: model.eps };
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub backbone: BackboneParams,
    pub heads: Vec<PlayerHead>,
    pub fusion: FusionWeights,
    pub partition: Partition,
    pub eps: f64,
}

impl ModelState {
    /// Backbone weights ~ N(0, 1/d), heads ~ N(0, 0.01^2), zero biases and
    /// uniform fusion.
    pub fn init(
        partition: Partition,
        input_dim: usize,
        kind: BackboneKind,
        hidden_dim: usize,
        eps: f64,
        seed: u64,
    ) -> Result<Self> {
        check_eps(eps)?;
        if input_dim == 0 {
            return Err(Error::config("input dimension must be >= 1"));
        }
        let backbone = match kind {
            BackboneKind::Identity => BackboneParams::identity(input_dim),
            BackboneKind::Mlp1 => {
                if hidden_dim == 0 {
                    return Err(Error::config("mlp1 hidden dimension must be >= 1"));
                }
                let mut rng = seeded_rng(seed, 40);
                let sd = 1.0 / (input_dim as f64).sqrt();
                let mut w = Matrix::zeros(input_dim, hidden_dim);
                for v in w.as_mut_slice() {
                    *v = sd * rng.sample::<f64, _>(StandardNormal);
                }
                BackboneParams::mlp1(w, vec![0.0; hidden_dim])?
            }
        };
        let dp = backbone.feature_dim();
        let mut rng = seeded_rng(seed, 41);
        let heads = (0..partition.num_players())
            .map(|i| {
                let k = partition.subset(i).len();
                let mut w = Matrix::zeros(k, dp);
                for v in w.as_mut_slice() {
                    *v = 0.01 * rng.sample::<f64, _>(StandardNormal);
                }
                PlayerHead { player: i, weights: w, bias: vec![0.0; k] }
            })
            .collect();
        let fusion = FusionWeights::uniform(&partition);
        Ok(ModelState { backbone, heads, fusion, partition, eps })
    }

    pub fn num_players(&self) -> usize {
        self.heads.len()
    }

    pub fn num_labels(&self) -> usize {
        self.partition.num_labels()
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.input_dim
    }

    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        let (pre, h) = backbone_pass(&self.backbone, x)?;
        let logits = self.heads.iter().map(|hd| player_logits(hd, &h)).collect::<Result<Vec<_>>>()?;
        let posts: Vec<Matrix> = logits
            .iter()
            .map(|z| {
                let mut p = z.clone();
                p.as_mut_slice().iter_mut().for_each(|v| *v = posterior(*v));
                p
            })
            .collect();
        let raw = fuse_raw(&posts, &self.fusion, &self.partition)?;
        let mut probs = raw.clone();
        probs.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(self.eps, 1.0 - self.eps));
        let input = pre.as_ref().map(|_| x.clone());
        Ok(Forward { input, pre, h, logits, posts, raw, fused: FusedPrediction { probs, eps: self.eps } })
    }

    /// Backbone, every head, then clipped fusion.
    pub fn predict(&self, x: &Matrix) -> Result<FusedPrediction> {
        Ok(self.forward(x)?.fused)
    }

    /// Block 0 is backbone plus fusion; block `i + 1` is player `i`.
    pub fn num_blocks(&self) -> usize {
        self.heads.len() + 1
    }

    pub fn block_len(&self, block: usize) -> usize {
        if block == 0 {
            self.backbone.num_params() + self.fusion.num_params()
        } else {
            let h = &self.heads[block - 1];
            h.weights.as_slice().len() + h.bias.len()
        }
    }

    pub fn block_params(&self, block: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.block_len(block));
        if block == 0 {
            v.extend_from_slice(self.backbone.weight.as_slice());
            v.extend_from_slice(&self.backbone.bias);
            for a in &self.fusion.logits {
                v.extend_from_slice(a);
            }
        } else {
            let h = &self.heads[block - 1];
            v.extend_from_slice(h.weights.as_slice());
            v.extend_from_slice(&h.bias);
        }
        v
    }

    pub fn set_block_params(&mut self, block: usize, v: &[f64]) {
        assert_eq!(v.len(), self.block_len(block), "block {block} length");
        let mut it = v.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        if block == 0 {
            fill(self.backbone.weight.as_mut_slice());
            fill(&mut self.backbone.bias);
            for a in &mut self.fusion.logits {
                fill(a);
            }
        } else {
            let h = &mut self.heads[block - 1];
            fill(h.weights.as_mut_slice());
            fill(&mut h.bias);
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..self.num_blocks()).all(|b| self.block_params(b).iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_player_partition() -> Partition {
        Partition::from_subsets(vec![vec![0, 1], vec![1, 2]], 3, 0.5).unwrap()
    }

    #[test]
    fn identity_and_relu_backbones() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.0]]);
        assert_eq!(forward_backbone(&BackboneParams::identity(2), &x).unwrap(), x);
        let bb = BackboneParams::mlp1(Matrix::identity(2), vec![0.0; 2]).unwrap();
        assert_eq!(forward_backbone(&bb, &x).unwrap(), x);
        let neg = BackboneParams::mlp1(Matrix::from_rows(&[vec![-1.0, -2.0], vec![0.0, -1.0]]), vec![-0.5, 0.0]).unwrap();
        assert_eq!(forward_backbone(&neg, &x).unwrap(), Matrix::zeros(2, 2));
        assert!(forward_backbone(&bb, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn posteriors() {
        let h = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let zero = PlayerHead { player: 0, weights: Matrix::zeros(2, 2), bias: vec![0.0; 2] };
        assert_eq!(player_posteriors(&zero, &h).unwrap().as_slice(), &[0.5, 0.5]);
        let two = PlayerHead { player: 0, weights: Matrix::from_rows(&[vec![2.0, 0.0]]), bias: vec![0.0] };
        assert!((player_posteriors(&two, &h).unwrap()[(0, 0)] - 0.880797).abs() < 1e-6);
        let big = PlayerHead { player: 0, weights: Matrix::from_rows(&[vec![500.0, 0.0]]), bias: vec![0.0] };
        let p = player_posteriors(&big, &h).unwrap()[(0, 0)];
        assert!(p < 1.0 && p > 0.999);
        assert!(player_posteriors(&zero, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn fusion_arithmetic_and_clip() {
        let p = two_player_partition();
        let posts = vec![Matrix::from_rows(&[vec![0.3, 0.2]]), Matrix::from_rows(&[vec![0.6, 0.999]])];
        let w = FusionWeights::uniform(&p);
        let fp = fuse(&posts, &w, &p, 0.01).unwrap();
        assert_eq!(fp.probs[(0, 0)], 0.3);
        assert!((fp.probs[(0, 1)] - 0.4).abs() < 1e-15);
        assert_eq!(fp.probs[(0, 2)], 0.99);
        assert!(fuse(&posts[..1], &w, &p, 0.01).is_err());
    }

    #[test]
    fn strict_threshold() {
        let fp = FusedPrediction::new(Matrix::from_rows(&[vec![0.5, 0.51, 0.2]]), 0.01).unwrap();
        let y = threshold(&fp, &ThresholdVector::constant(3, 0.5)).unwrap();
        assert_eq!(y.row(0), &[false, true, false]);
        assert!(FusedPrediction::new(Matrix::from_rows(&[vec![1.0]]), 0.01).is_err());
    }

    #[test]
    fn tuning_on_separable_label() {
        let fp = FusedPrediction::new(Matrix::from_rows(&[vec![0.1], vec![0.2], vec![0.7], vec![0.9]]), 0.01).unwrap();
        let y = LabelMatrix::from_u8_rows(&[vec![0], vec![0], vec![1], vec![1]]);
        let t = tune_thresholds(&fp, &y).unwrap();
        assert!((t.values[0] - 0.45).abs() < 1e-15);
        let pred = threshold(&fp, &t).unwrap();
        assert_eq!(pred.column_count(0), 2);
    }

    #[test]
    fn tuning_fallbacks() {
        let fp = FusedPrediction::new(Matrix::filled(3, 2, 0.3), 0.01).unwrap();
        let y = LabelMatrix::from_u8_rows(&[vec![1, 0], vec![0, 0], vec![1, 0]]);
        let t = tune_thresholds(&fp, &y).unwrap();
        assert_eq!(t.values, vec![0.5, 0.5]);
        assert_eq!(t.fallback, vec![1]);
    }

    #[test]
    fn block_round_trip() {
        let p = two_player_partition();
        let mut m = ModelState::init(p, 3, BackboneKind::Mlp1, 4, DEFAULT_EPS, 1).unwrap();
        for b in 0..m.num_blocks() {
            let mut v = m.block_params(b);
            v.iter_mut().enumerate().for_each(|(k, x)| *x += k as f64);
            m.set_block_params(b, &v);
            assert_eq!(m.block_params(b), v);
        }
    }
}
