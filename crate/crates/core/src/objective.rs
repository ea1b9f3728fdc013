//! Shared payoff `R`, curiosity `C_i`, player objectives `J_i`, the potential
//! `Phi` and their analytic block gradients.
//!
//! Peer targets are plain matrices owned by [`PeerState`]; nothing in this
//! module differentiates through them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelMatrix, LabelStats};
use crate::error::{Error, Result};
use crate::linalg::{bernoulli_jsd, log_sigmoid, logit, Matrix};
use crate::model::{BackboneKind, FusedPrediction, Forward, ModelState, DEFAULT_EPS};
use crate::partition::{build_partition, Partition};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Uniform,
    InverseFrequency,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightScheme::Uniform),
            "inverse-frequency" => Ok(WeightScheme::InverseFrequency),
            _ => Err(Error::config(format!("unknown weight scheme {s:?}"))),
        }
    }
}

/// `1 / (1 + freq)` per label.
pub fn rarity_weights(freq: &[f64]) -> Vec<f64> {
    freq.iter().map(|f| 1.0 / (1.0 + f)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffWeights {
    pub w: Vec<f64>,
    pub z: f64,
    pub scheme: WeightScheme,
}

impl PayoffWeights {
    pub fn new(scheme: WeightScheme, freq: &[f64]) -> Self {
        let w = match scheme {
            WeightScheme::Uniform => vec![1.0; freq.len()],
            WeightScheme::InverseFrequency => rarity_weights(freq),
        };
        Self::from_weights(w, scheme)
    }

    pub fn from_weights(w: Vec<f64>, scheme: WeightScheme) -> Self {
        let z = w.iter().sum();
        PayoffWeights { w, z, scheme }
    }

    pub fn num_labels(&self) -> usize {
        self.w.len()
    }

    pub fn z_over(&self, labels: &[usize]) -> f64 {
        labels.iter().map(|&l| self.w[l]).sum()
    }

    pub fn w_min_over(&self, labels: &[usize]) -> f64 {
        labels.iter().map(|&l| self.w[l]).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CuriosityConfig {
    pub alpha: f64,
    pub beta_max: f64,
    pub warmup_fraction: f64,
    pub ema_decay: f64,
}

impl Default for CuriosityConfig {
    fn default() -> Self {
        CuriosityConfig { alpha: 0.4, beta_max: 0.3, warmup_fraction: 0.1, ema_decay: 0.99 }
    }
}

impl CuriosityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta_max >= 0.0 && self.alpha.is_finite() && self.beta_max.is_finite()) {
            return Err(Error::config("alpha and beta_max must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup fraction must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config("EMA decay must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Linear warmup from 0 over the first `warmup_fraction * total` sweeps.
    pub fn beta_at(&self, sweep: usize, total: usize) -> f64 {
        let span = self.warmup_fraction * total as f64;
        if span <= 0.0 {
            self.beta_max
        } else {
            self.beta_max * (sweep as f64 / span).min(1.0)
        }
    }
}

/// Uniform mean of the other active players' posteriors on `O_i`, one
/// column per overlap label.
pub fn peer_average(posts: &[Matrix], i: usize, p: &Partition) -> Result<Matrix> {
    let overlap = p.overlap_set(i)?;
    let n = posts.first().map_or(0, Matrix::rows);
    let mut out = Matrix::zeros(n, overlap.len());
    for (c, &lab) in overlap.iter().enumerate() {
        let peers: Vec<(usize, usize)> = p
            .active_players(lab)
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| (j, p.local_index(j, lab).expect("active implies owned")))
            .collect();
        let k = peers.len() as f64;
        for r in 0..n {
            let s: f64 = peers.iter().map(|&(j, col)| posts[j][(r, col)]).sum();
            out[(r, c)] = s / k;
        }
    }
    Ok(out)
}

/// Per-player EMA of the peer average over the player's overlap labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerState {
    pub decay: f64,
    pub eps: f64,
    pub values: Vec<Matrix>,
    pub initialized: bool,
}

impl PeerState {
    pub fn new(p: &Partition, num_instances: usize, decay: f64, eps: f64) -> Result<Self> {
        let values = (0..p.num_players())
            .map(|i| Ok(Matrix::zeros(num_instances, p.overlap_set(i)?.len())))
            .collect::<Result<Vec<_>>>()?;
        Ok(PeerState { decay, eps, values, initialized: false })
    }

    /// One EMA step from the current detached posteriors. The first call
    /// copies the observation.
    pub fn observe(&mut self, posts: &[Matrix], p: &Partition) -> Result<()> {
        for i in 0..p.num_players() {
            let mean = peer_average(posts, i, p)?;
            if mean.shape() != self.values[i].shape() {
                return Err(Error::dim(format!("peer state of player {i} has shape {:?}", self.values[i].shape())));
            }
            let v = &mut self.values[i];
            for (dst, &m) in v.as_mut_slice().iter_mut().zip(mean.as_slice()) {
                let next = if self.initialized { self.decay * *dst + (1.0 - self.decay) * m } else { m };
                *dst = next.clamp(self.eps, 1.0 - self.eps);
            }
        }
        self.initialized = true;
        Ok(())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Vec<Matrix> {
        self.values
            .iter()
            .map(|m| {
                let mut out = Matrix::zeros(rows.len(), m.cols());
                for (k, &r) in rows.iter().enumerate() {
                    out.row_mut(k).copy_from_slice(m.row(r));
                }
                out
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub r: f64,
    /// Batch means `E[C_i]`.
    pub curiosity: Vec<f64>,
    pub j: Vec<f64>,
    pub phi: f64,
}

fn check_labels(fp_rows: usize, fp_cols: usize, y: &LabelMatrix) -> Result<()> {
    if y.rows() != fp_rows || y.cols() != fp_cols {
        return Err(Error::dim(format!(
            "labels are {}x{}, predictions {}x{}",
            y.rows(),
            y.cols(),
            fp_rows,
            fp_cols
        )));
    }
    Ok(())
}

fn payoff_over(fp: &FusedPrediction, y: &LabelMatrix, w: &[f64], labels: &[usize], z: f64) -> Result<f64> {
    check_labels(fp.rows(), fp.cols(), y)?;
    fp.check_clipped()?;
    let n = fp.rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for r in 0..n {
        let mut s = 0.0;
        for &l in labels {
            let p = fp.probs[(r, l)];
            s += w[l] * if y.get(r, l) { p.ln() } else { (1.0 - p).ln() };
        }
        total += s / z;
    }
    Ok(total / n as f64)
}

/// Rarity-weighted mean log-likelihood of the fused prediction.
pub fn global_payoff(fp: &FusedPrediction, y: &LabelMatrix, pw: &PayoffWeights) -> Result<f64> {
    if pw.num_labels() != fp.cols() {
        return Err(Error::dim("payoff weights do not match label count"));
    }
    let all: Vec<usize> = (0..fp.cols()).collect();
    payoff_over(fp, y, &pw.w, &all, pw.z)
}

/// The payoff restricted to `labels` and normalised by their weight sum.
pub fn tail_payoff(fp: &FusedPrediction, y: &LabelMatrix, pw: &PayoffWeights, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::DegenerateTail("empty label set".into()));
    }
    payoff_over(fp, y, &pw.w, labels, pw.z_over(labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CuriosityValue {
    pub per_instance: Vec<f64>,
    pub mean: f64,
}

/// Curiosity of player `i` from its logits. Log-likelihood terms use
/// `ln sigmoid(+-z)`; the disagreement term is the mean Bernoulli JSD over
/// the overlap set against the constant `peer`.
pub fn curiosity(
    i: usize,
    logits_i: &Matrix,
    peer: &Matrix,
    y: &LabelMatrix,
    p: &Partition,
    rarity: &[f64],
    beta: f64,
) -> Result<CuriosityValue> {
    let labels = p.subset(i);
    let overlap = p.overlap_set(i)?;
    if logits_i.cols() != labels.len() || peer.cols() != overlap.len() {
        return Err(Error::dim(format!("curiosity inputs of player {i} do not match its label subset")));
    }
    let n = logits_i.rows();
    if y.rows() != n || peer.rows() != n {
        return Err(Error::dim("curiosity batch sizes differ"));
    }
    let cols: Vec<usize> = overlap.iter().map(|&l| p.local_index(i, l).expect("overlap is owned")).collect();
    let mut per_instance = Vec::with_capacity(n);
    for r in 0..n {
        let mut ll = 0.0;
        for (k, &lab) in labels.iter().enumerate() {
            let z = logits_i[(r, k)];
            ll += rarity[lab] * if y.get(r, lab) { log_sigmoid(z) } else { log_sigmoid(-z) };
        }
        let mut d = 0.0;
        if !cols.is_empty() {
            for (o, &k) in cols.iter().enumerate() {
                d += bernoulli_jsd(crate::model::posterior(logits_i[(r, k)]), peer[(r, o)]);
            }
            d /= cols.len() as f64;
        }
        per_instance.push(ll + beta * d);
    }
    let mean = if n == 0 { 0.0 } else { per_instance.iter().sum::<f64>() / n as f64 };
    Ok(CuriosityValue { per_instance, mean })
}

pub fn player_objective(r: f64, c_mean: f64, alpha: f64) -> f64 {
    r + alpha * c_mean
}

/// Objective constants for one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub payoff: PayoffWeights,
    pub rarity: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl Objective {
    pub fn new(payoff: PayoffWeights, rarity: Vec<f64>, alpha: f64, beta: f64) -> Result<Self> {
        if payoff.num_labels() != rarity.len() {
            return Err(Error::dim("payoff and rarity weights differ in length"));
        }
        if payoff.w.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::config("payoff weights must be positive"));
        }
        Ok(Objective { payoff, rarity, alpha, beta })
    }

    pub fn evaluate(&self, model: &ModelState, fwd: &Forward, y: &LabelMatrix, peers: &[Matrix]) -> Result<ObjectiveValue> {
        let r = global_payoff(&fwd.fused, y, &self.payoff)?;
        let mut curiosity_means = Vec::with_capacity(model.num_players());
        for i in 0..model.num_players() {
            let c = curiosity(i, &fwd.logits[i], &peers[i], y, &model.partition, &self.rarity, self.beta)?;
            curiosity_means.push(c.mean);
        }
        let j = curiosity_means.iter().map(|&c| player_objective(r, c, self.alpha)).collect();
        let phi = r + self.alpha * curiosity_means.iter().sum::<f64>();
        Ok(ObjectiveValue { r, curiosity: curiosity_means, j, phi })
    }

    /// `dPhi / dz_i` for player `i` (equal to `dJ_i / dz_i`), batch mean
    /// included.
    pub fn logit_grad(&self, model: &ModelState, fwd: &Forward, y: &LabelMatrix, peers: &[Matrix], i: usize) -> Result<Matrix> {
        let p = &model.partition;
        let labels = p.subset(i);
        let n = fwd.h.rows();
        check_labels(n, p.num_labels(), y)?;
        let overlap = p.overlap_set(i)?;
        let peer = &peers[i];
        if peer.rows() != n || peer.cols() != overlap.len() {
            return Err(Error::dim(format!("peer targets of player {i} have shape {:?}", peer.shape())));
        }
        let mut slot = vec![None; labels.len()];
        for (o, &l) in overlap.iter().enumerate() {
            slot[p.local_index(i, l).unwrap()] = Some(o);
        }
        let d_scale = if overlap.is_empty() { 0.0 } else { self.alpha * self.beta / overlap.len() as f64 };
        let omega: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let pos = p.active_players(l).iter().position(|&j| j == i).unwrap();
                model.fusion.weights(l)[pos]
            })
            .collect();
        let (lo, hi) = (model.eps, 1.0 - model.eps);
        let inv_n = 1.0 / n as f64;
        let mut g = Matrix::zeros(n, labels.len());
        for r in 0..n {
            for (k, &lab) in labels.iter().enumerate() {
                let z = fwd.logits[i][(r, k)];
                let pk = fwd.posts[i][(r, k)];
                let raw = fwd.raw[(r, lab)];
                let y1 = y.get(r, lab);
                let c = self.payoff.w[lab] / self.payoff.z;
                let mut v = if raw < lo || raw > hi {
                    0.0
                } else if y1 {
                    c * ((omega[k] * pk / raw) * (1.0 - pk))
                } else {
                    -(c * ((omega[k] * (1.0 - pk) / (1.0 - raw)) * pk))
                };
                v += self.alpha * self.rarity[lab] * if y1 { 1.0 - pk } else { -pk };
                if let Some(o) = slot[k] {
                    let m = 0.5 * (pk + peer[(r, o)]);
                    v += d_scale * (pk * (1.0 - pk) * 0.5 * (z - logit(m)));
                }
                g[(r, k)] = v * inv_n;
            }
        }
        Ok(g)
    }

    /// `dPhi / d theta_i` flattened as head weights then bias.
    pub fn grad_player(&self, model: &ModelState, fwd: &Forward, y: &LabelMatrix, peers: &[Matrix], i: usize) -> Result<Vec<f64>> {
        let dz = self.logit_grad(model, fwd, y, peers, i)?;
        let (n, k, d) = (dz.rows(), dz.cols(), fwd.h.cols());
        let mut gw = Matrix::zeros(k, d);
        let mut gb = vec![0.0; k];
        for r in 0..n {
            let hr = fwd.h.row(r);
            for c in 0..k {
                let v = dz[(r, c)];
                for (dst, &h) in gw.row_mut(c).iter_mut().zip(hr) {
                    *dst += v * h;
                }
                gb[c] += v;
            }
        }
        let mut out = gw.into_vec();
        out.extend(gb);
        Ok(out)
    }

    /// `dPhi` with respect to block 0: backbone weights, backbone bias and
    /// fusion logits, in [`ModelState::block_params`] order.
    pub fn grad_backbone_fusion(&self, model: &ModelState, fwd: &Forward, y: &LabelMatrix, peers: &[Matrix]) -> Result<Vec<f64>> {
        let p = &model.partition;
        let n = fwd.h.rows();
        check_labels(n, p.num_labels(), y)?;
        let (lo, hi) = (model.eps, 1.0 - model.eps);
        let inv_n = 1.0 / n as f64;

        let mut out = Vec::with_capacity(model.block_len(0));
        if let Some(pre) = &fwd.pre {
            let dp = fwd.h.cols();
            let mut dh = Matrix::zeros(n, dp);
            for i in 0..model.num_players() {
                let dz = self.logit_grad(model, fwd, y, peers, i)?;
                let w = &model.heads[i].weights;
                for r in 0..n {
                    let row = dh.row_mut(r);
                    for c in 0..dz.cols() {
                        let v = dz[(r, c)];
                        for (dst, &wv) in row.iter_mut().zip(w.row(c)) {
                            *dst += v * wv;
                        }
                    }
                }
            }
            for (v, &a) in dh.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if a <= 0.0 {
                    *v = 0.0;
                }
            }
            let x = fwd.input.as_ref().ok_or_else(|| Error::dim("forward pass did not keep its input"))?;
            let d = x.cols();
            let mut gw = Matrix::zeros(d, dp);
            let mut gb = vec![0.0; dp];
            for r in 0..n {
                let dr = dh.row(r);
                for a in 0..d {
                    let xa = x[(r, a)];
                    if xa != 0.0 {
                        for (dst, &v) in gw.row_mut(a).iter_mut().zip(dr) {
                            *dst += xa * v;
                        }
                    }
                }
                for (dst, &v) in gb.iter_mut().zip(dr) {
                    *dst += v;
                }
            }
            out.extend(gw.into_vec());
            out.extend(gb);
        }

        for lab in 0..p.num_labels() {
            let active = p.active_players(lab);
            let omega = model.fusion.weights(lab);
            let c = self.payoff.w[lab] / self.payoff.z;
            let mut ga = vec![0.0; active.len()];
            if active.len() > 1 {
                for r in 0..n {
                    let raw = fwd.raw[(r, lab)];
                    if raw < lo || raw > hi {
                        continue;
                    }
                    let dr = if y.get(r, lab) { c / raw } else { -c / (1.0 - raw) } * inv_n;
                    for (k, &i) in active.iter().enumerate() {
                        let pk = fwd.posts[i][(r, p.local_index(i, lab).unwrap())];
                        ga[k] += dr * omega[k] * (pk - raw);
                    }
                }
            }
            out.extend(ga);
        }
        Ok(out)
    }

    pub fn grad_block(&self, model: &ModelState, fwd: &Forward, y: &LabelMatrix, peers: &[Matrix], block: usize) -> Result<Vec<f64>> {
        if block == 0 {
            self.grad_backbone_fusion(model, fwd, y, peers)
        } else {
            self.grad_player(model, fwd, y, peers, block - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub block: usize,
    /// `J_i` for player blocks, `Phi` for block 0.
    pub target: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub rel_floor: f64,
    pub blocks: Vec<BlockCheck>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("gradcheck h={} tol={} floor={}\n", self.h, self.tol, self.rel_floor);
        for b in &self.blocks {
            s.push_str(&format!(
                "block {} ({}): max_abs={:.3e} max_rel={:.3e} worst={} {}\n",
                b.block,
                b.target,
                b.max_abs_err,
                b.max_rel_err,
                b.worst_index,
                if b.pass { "PASS" } else { "FAIL" }
            ));
        }
        s.push_str(if self.pass { "PASS\n" } else { "FAIL\n" });
        s
    }
}

/// Denominator floor for relative errors, so that entries which are zero
/// analytically are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central differences of `J_i` (player blocks, plus `Phi` for the
/// block-gradient identity) and `Phi` (block 0) against the analytic
/// gradients. `corrupt` adds an offset to one analytic entry, for testing
/// the checker itself.
pub fn finite_diff_check(
    model: &ModelState,
    x: &Matrix,
    y: &LabelMatrix,
    peers: &[Matrix],
    obj: &Objective,
    h: f64,
    tol: f64,
    corrupt: Option<(usize, usize, f64)>,
) -> Result<GradCheckReport> {
    if !(h > 0.0 && h <= 1e-3) {
        return Err(Error::config(format!("finite-difference step must lie in (0, 1e-3], got {h}")));
    }
    let fwd = model.forward(x)?;
    let mut work = model.clone();
    let mut blocks = Vec::new();
    for b in 0..model.num_blocks() {
        let mut g = obj.grad_block(model, &fwd, y, peers, b)?;
        if let Some((cb, idx, off)) = corrupt {
            if cb == b {
                g[idx] += off;
            }
        }
        let base = model.block_params(b);
        let mut num_j = vec![0.0; g.len()];
        let mut num_phi = vec![0.0; g.len()];
        let mut theta = base.clone();
        for k in 0..g.len() {
            theta[k] = base[k] + h;
            work.set_block_params(b, &theta);
            let plus = obj.evaluate(&work, &work.forward(x)?, y, peers)?;
            theta[k] = base[k] - h;
            work.set_block_params(b, &theta);
            let minus = obj.evaluate(&work, &work.forward(x)?, y, peers)?;
            theta[k] = base[k];
            num_phi[k] = (plus.phi - minus.phi) / (2.0 * h);
            num_j[k] = if b == 0 { num_phi[k] } else { (plus.j[b - 1] - minus.j[b - 1]) / (2.0 * h) };
        }
        work.set_block_params(b, &base);
        let targets: Vec<(&str, &Vec<f64>)> =
            if b == 0 { vec![("Phi", &num_phi)] } else { vec![("J", &num_j), ("Phi", &num_phi)] };
        for (name, num) in targets {
            let (mut max_abs, mut max_rel, mut worst) = (0.0f64, 0.0f64, 0);
            for (k, (&a, &nv)) in g.iter().zip(num.iter()).enumerate() {
                let rel = relative_error(a, nv);
                max_abs = max_abs.max((a - nv).abs());
                if rel > max_rel {
                    max_rel = rel;
                    worst = k;
                }
            }
            let target = if name == "J" { format!("J_{}", b) } else { name.to_string() };
            blocks.push(BlockCheck { block: b, target, max_abs_err: max_abs, max_rel_err: max_rel, worst_index: worst, pass: max_rel <= tol });
        }
    }
    let pass = blocks.iter().all(|b| b.pass);
    Ok(GradCheckReport { h, tol, rel_floor: REL_ERR_FLOOR, blocks, pass })
}

/// A random configuration for gradient checking.
#[derive(Debug, Clone)]
pub struct CheckFixture {
    pub model: ModelState,
    pub x: Matrix,
    pub y: LabelMatrix,
    pub peers: Vec<Matrix>,
    pub objective: Objective,
}

/// Features and parameters uniform on `[-1, 1]`, labels Bernoulli(0.4),
/// peer targets uniform on `[0.05, 0.95]`, `alpha = 0.4`, `beta = 0.3` and
/// inverse-frequency payoff weights.
pub fn random_check_fixture(
    seed: u64,
    labels: usize,
    players: usize,
    rho: f64,
    instances: usize,
    kind: BackboneKind,
) -> Result<CheckFixture> {
    const DIM: usize = 4;
    const HIDDEN: usize = 5;
    if instances == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = seeded_rng(seed, 50);
    let mut unif = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let x = Matrix::from_vec(instances, DIM, (0..instances * DIM).map(|_| unif(-1.0, 1.0)).collect());
    let rows: Vec<Vec<bool>> = (0..instances).map(|_| (0..labels).map(|_| unif(0.0, 1.0) < 0.4).collect()).collect();
    let y = LabelMatrix::from_rows(&rows);
    let counts: Vec<usize> = (0..labels).map(|c| y.column_count(c)).collect();
    let stats = LabelStats::from_counts(counts, instances, seed);
    let partition = build_partition(&stats, players, rho, seed)?;
    let mut model = ModelState::init(partition, DIM, kind, HIDDEN, DEFAULT_EPS, seed)?;
    for b in 0..model.num_blocks() {
        let v: Vec<f64> = (0..model.block_len(b)).map(|_| unif(-1.0, 1.0)).collect();
        model.set_block_params(b, &v);
    }
    let peers = (0..players)
        .map(|i| {
            let k = model.partition.overlap_set(i)?.len();
            Ok(Matrix::from_vec(instances, k, (0..instances * k).map(|_| unif(0.05, 0.95)).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    // smoothed so labels without positives still get finite weights
    let freq: Vec<f64> = (0..labels).map(|c| (y.column_count(c) as f64 + 1.0) / (instances as f64 + 2.0)).collect();
    let objective =
        Objective::new(PayoffWeights::new(WeightScheme::InverseFrequency, &freq), rarity_weights(&freq), 0.4, 0.3)?;
    Ok(CheckFixture { model, x, y, peers, objective })
}
