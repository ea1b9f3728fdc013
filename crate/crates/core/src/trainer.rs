//! Cyclic block ascent on the potential: one update per player head (others,
//! fusion and backbone frozen), then one backbone/fusion update, per sweep.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_head_tail, Dataset, LabelMatrix, LabelStats, TailMode, TailSet};
use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Matrix};
use crate::metrics::rare_f1;
use crate::model::{threshold, BackboneKind, FusedPrediction, Forward, ModelState, ThresholdVector, DEFAULT_EPS};
use crate::objective::{rarity_weights, CuriosityConfig, Objective, ObjectiveValue, PayoffWeights, PeerState, WeightScheme};
use crate::partition::Partition;
use crate::seeded_rng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum BatchMode {
    Full,
    Minibatch { size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    Fixed,
    Armijo { c: f64, shrink: f64, max_tries: usize },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl StepRule {
    pub fn armijo() -> Self {
        StepRule::Armijo { c: 1e-4, shrink: 0.5, max_tries: 30 }
    }

    pub fn adam() -> Self {
        StepRule::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sweeps: usize,
    pub batch: BatchMode,
    pub step_rule: StepRule,
    /// Player step size (initial trial step under Armijo).
    pub eta: f64,
    /// Backbone/fusion step size.
    pub eta0: f64,
    /// Global-norm clip for fixed and Adam steps; 0 disables clipping.
    pub grad_clip: f64,
    pub curiosity: CuriosityConfig,
    pub eps: f64,
    pub seed: u64,
    pub inner_iters: usize,
    pub payoff_scheme: WeightScheme,
    pub backbone: BackboneKind,
    pub hidden_dim: usize,
    /// Evaluate the payoff with the other players' sweep-start posteriors.
    pub stale_payoff: bool,
    pub tail_fraction: f64,
    pub eval_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sweeps: 200,
            batch: BatchMode::Full,
            step_rule: StepRule::armijo(),
            eta: 1.0,
            eta0: 1.0,
            grad_clip: 5.0,
            curiosity: CuriosityConfig::default(),
            eps: DEFAULT_EPS,
            seed: 0,
            inner_iters: 1,
            payoff_scheme: WeightScheme::InverseFrequency,
            backbone: BackboneKind::Identity,
            hidden_dim: 16,
            stale_payoff: false,
            tail_fraction: 0.2,
            eval_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.curiosity.validate()?;
        crate::model::check_eps(self.eps)?;
        if !(self.eta > 0.0 && self.eta0 > 0.0) {
            return Err(Error::config("step sizes must be positive"));
        }
        if self.inner_iters == 0 {
            return Err(Error::config("inner_iters must be >= 1"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("gradient clip norm must be >= 0"));
        }
        match self.step_rule {
            StepRule::Armijo { c, shrink, .. } => {
                if !(c > 0.0 && c < 1.0 && shrink > 0.0 && shrink < 1.0) {
                    return Err(Error::config("armijo c and shrink must lie in (0, 1)"));
                }
            }
            StepRule::Adam { beta1, beta2, epsilon } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                    return Err(Error::config("invalid Adam constants"));
                }
            }
            StepRule::Fixed => {}
        }
        if let BatchMode::Minibatch { size } = self.batch {
            if size == 0 {
                return Err(Error::config("minibatch size must be >= 1"));
            }
        }
        if !(self.eval_threshold > self.eps && self.eval_threshold < 1.0 - self.eps) {
            return Err(Error::config("evaluation threshold must lie in (eps, 1 - eps)"));
        }
        Ok(())
    }
}

/// Largest `eta0 * shrink^k`, `k < max_tries`, with
/// `phi(eta) >= phi0 + c * eta * grad_sq`; 0 if none qualifies.
pub fn armijo_step(
    phi0: f64,
    grad_sq: f64,
    eta0: f64,
    c: f64,
    shrink: f64,
    max_tries: usize,
    mut phi_at: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    let mut eta = eta0;
    for _ in 0..max_tries {
        let v = phi_at(eta)?;
        if v >= phi0 + c * eta * grad_sq {
            return Ok(eta);
        }
        eta *= shrink;
    }
    Ok(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: Vec<u64>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    fn new(model: &ModelState) -> Self {
        let lens: Vec<usize> = (0..model.num_blocks()).map(|b| model.block_len(b)).collect();
        AdamState {
            t: vec![0; lens.len()],
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub phi: f64,
    pub r: f64,
    /// Per block, measured before that block's first update in the sweep.
    pub grad_norms: Vec<f64>,
    /// Per block, the step size actually taken (0 when Armijo gave up).
    pub steps: Vec<f64>,
    pub val_rare_f1: Option<f64>,
    pub beta: f64,
    /// `Phi` right after the peer update, before any block moved.
    pub phi_start: f64,
    pub curiosity: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub records: Vec<SweepRecord>,
}

impl Telemetry {
    pub fn phi_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.phi).collect()
    }

    pub fn last(&self) -> Option<&SweepRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let nb = self.records.first().map_or(1, |r| r.grad_norms.len());
        let mut cols = vec!["sweep".to_string(), "phi".into(), "R".into()];
        cols.extend((0..nb).map(|b| format!("grad_norm_block_{b}")));
        cols.extend((0..nb).map(|b| format!("step_{b}")));
        cols.push("val_rare_f1".into());
        cols.push("beta".into());
        cols.push("phi_start".into());
        cols.extend((1..nb).map(|i| format!("curiosity_{i}")));
        let mut s = cols.join(",");
        s.push('\n');
        for r in &self.records {
            let mut f = vec![r.sweep.to_string(), r.phi.to_string(), r.r.to_string()];
            f.extend(r.grad_norms.iter().map(f64::to_string));
            f.extend(r.steps.iter().map(f64::to_string));
            f.push(r.val_rare_f1.map_or(String::new(), |v| v.to_string()));
            f.push(r.beta.to_string());
            f.push(r.phi_start.to_string());
            f.extend(r.curiosity.iter().map(f64::to_string));
            s.push_str(&f.join(","));
            s.push('\n');
        }
        s
    }
}

/// True iff every block gradient norm of the latest sweep is below `g_tol`.
pub fn detect_stationarity(tele: &Telemetry, g_tol: f64) -> Result<bool> {
    let last = tele.last().ok_or_else(|| Error::config("stationarity needs at least one completed sweep"))?;
    Ok(last.grad_norms.iter().all(|&g| g < g_tol))
}

pub fn predict(model: &ModelState, x: &Matrix) -> Result<FusedPrediction> {
    model.predict(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub sweep: usize,
    pub config: TrainConfig,
    pub model: ModelState,
    pub peers: PeerState,
    pub adam: Option<AdamState>,
    pub train_freq: Vec<f64>,
    pub train_fingerprint: String,
    pub tail: Option<TailSet>,
    pub telemetry: Telemetry,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {} (expected {CHECKPOINT_VERSION})", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

struct EvalSet<'a> {
    ds: &'a Dataset,
    x: Matrix,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    y: &'a LabelMatrix,
    x: Matrix,
    val: Option<EvalSet<'a>>,
    freq: Vec<f64>,
    fingerprint: String,
    tail: Option<TailSet>,
    objective: Objective,
    model: ModelState,
    peers: PeerState,
    adam: Option<AdamState>,
    sweep: usize,
    telemetry: Telemetry,
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a Dataset, partition: Partition, cfg: TrainConfig, val: Option<&'a Dataset>) -> Result<Self> {
        cfg.validate()?;
        if partition.num_labels() != train.num_labels() {
            return Err(Error::Partition(format!(
                "partition covers {} labels, dataset has {}",
                partition.num_labels(),
                train.num_labels()
            )));
        }
        let model = ModelState::init(partition, train.num_features(), cfg.backbone, cfg.hidden_dim, cfg.eps, cfg.seed)?;
        let peers = PeerState::new(&model.partition, train.num_instances(), cfg.curiosity.ema_decay, cfg.eps)?;
        let adam = matches!(cfg.step_rule, StepRule::Adam { .. }).then(|| AdamState::new(&model));
        Self::assemble(train, val, cfg, model, peers, adam, 0, Telemetry::default(), None)
    }

    pub fn from_checkpoint(ck: Checkpoint, train: &'a Dataset, val: Option<&'a Dataset>) -> Result<Self> {
        if ck.train_fingerprint != train.fingerprint() {
            return Err(Error::Checkpoint("training data differs from the checkpoint's".into()));
        }
        let Checkpoint { config, model, peers, adam, sweep, telemetry, train_freq, .. } = ck;
        Self::assemble(train, val, config, model, peers, adam, sweep, telemetry, Some(train_freq))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        train: &'a Dataset,
        val: Option<&'a Dataset>,
        cfg: TrainConfig,
        model: ModelState,
        peers: PeerState,
        adam: Option<AdamState>,
        sweep: usize,
        telemetry: Telemetry,
        expect_freq: Option<Vec<f64>>,
    ) -> Result<Self> {
        let stats = LabelStats::compute(train)?;
        if let Some(f) = expect_freq {
            if f != stats.freq {
                return Err(Error::Checkpoint("training data differs from the checkpoint's".into()));
            }
        }
        if model.input_dim() != train.num_features() {
            return Err(Error::dim(format!("model expects {} features, data has {}", model.input_dim(), train.num_features())));
        }
        let tail = split_head_tail(&stats, cfg.tail_fraction, TailMode::BottomFraction).ok();
        let payoff = PayoffWeights::new(cfg.payoff_scheme, &stats.freq);
        let objective = Objective::new(payoff, rarity_weights(&stats.freq), cfg.curiosity.alpha, 0.0)?;
        let val = match val {
            Some(ds) => {
                if ds.num_labels() != train.num_labels() || ds.num_features() != train.num_features() {
                    return Err(Error::dim("validation set shape differs from training set"));
                }
                Some(EvalSet { ds, x: ds.dense_features() })
            }
            None => None,
        };
        Ok(Trainer {
            x: train.dense_features(),
            y: train.labels(),
            cfg,
            val,
            freq: stats.freq,
            fingerprint: train.fingerprint(),
            tail,
            objective,
            model,
            peers,
            adam,
            sweep,
            telemetry,
        })
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn tail(&self) -> Option<&TailSet> {
        self.tail.as_ref()
    }

    pub fn sweep(&self) -> usize {
        self.sweep
    }

    pub fn is_done(&self) -> bool {
        self.sweep >= self.cfg.sweeps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            sweep: self.sweep,
            config: self.cfg.clone(),
            model: self.model.clone(),
            peers: self.peers.clone(),
            adam: self.adam.clone(),
            train_freq: self.freq.clone(),
            train_fingerprint: self.fingerprint.clone(),
            tail: self.tail.clone(),
            telemetry: self.telemetry.clone(),
        }
    }

    /// Full-training-set objective at the current parameters and sweep
    /// constants.
    pub fn current_objective(&self) -> Result<ObjectiveValue> {
        let fwd = self.model.forward(&self.x)?;
        self.objective.evaluate(&self.model, &fwd, self.y, &self.peers.values)
    }

    fn batch_rows(&self) -> Option<Vec<usize>> {
        match self.cfg.batch {
            BatchMode::Full => None,
            BatchMode::Minibatch { size } => {
                let m = self.x.rows();
                if size >= m {
                    return None;
                }
                let mut rng = seeded_rng(self.cfg.seed, 1_000_000 + self.sweep as u64);
                let mut rows = sample(&mut rng, m, size).into_vec();
                rows.sort_unstable();
                Some(rows)
            }
        }
    }

    /// Runs one sweep. On a non-finite objective the state is rolled back to
    /// the start of the sweep and an error returned.
    pub fn step_sweep(&mut self) -> Result<&SweepRecord> {
        let snapshot = (self.model.clone(), self.peers.clone(), self.adam.clone());
        match self.sweep_inner() {
            Ok(rec) => {
                self.telemetry.records.push(rec);
                self.sweep += 1;
                Ok(self.telemetry.records.last().unwrap())
            }
            Err(e) => {
                (self.model, self.peers, self.adam) = snapshot;
                Err(e)
            }
        }
    }

    fn sweep_inner(&mut self) -> Result<SweepRecord> {
        let t = self.sweep;
        self.objective.beta = self.cfg.curiosity.beta_at(t, self.cfg.sweeps);
        let full = self.model.forward(&self.x)?;
        self.peers.observe(&full.posts, &self.model.partition)?;
        let phi_start = self.objective.evaluate(&self.model, &full, self.y, &self.peers.values)?.phi;

        let rows = self.batch_rows();
        let (bx, by, bpeers, mut cache) = match &rows {
            None => (self.x.clone(), self.y.clone(), self.peers.values.clone(), full),
            Some(r) => {
                let bx = select(&self.x, r);
                let cache = self.model.forward(&bx)?;
                (bx, self.y.select_rows(r), self.peers.select_rows(r), cache)
            }
        };

        let nb = self.model.num_blocks();
        let mut grad_norms = vec![0.0; nb];
        let mut steps = vec![0.0; nb];
        let stale = self.cfg.stale_payoff;
        for i in 0..self.model.num_players() {
            let b = i + 1;
            let mut local = if stale { Some(cache.clone()) } else { None };
            for it in 0..self.cfg.inner_iters {
                let fwd = match local.as_mut() {
                    Some(f) => {
                        f.refresh_player(&self.model, i)?;
                        f
                    }
                    None => &mut cache,
                };
                let (norm, step) = self.update_block(b, &bx, &by, &bpeers, fwd)?;
                if it == 0 {
                    grad_norms[b] = norm;
                }
                steps[b] = step;
            }
        }
        if stale {
            cache = self.model.forward(&bx)?;
        }
        for it in 0..self.cfg.inner_iters {
            let (norm, step) = self.update_block(0, &bx, &by, &bpeers, &mut cache)?;
            if it == 0 {
                grad_norms[0] = norm;
            }
            steps[0] = step;
        }

        let end = self.model.forward(&self.x)?;
        let v = self.objective.evaluate(&self.model, &end, self.y, &self.peers.values)?;
        if !(v.phi.is_finite() && self.model.is_finite()) {
            return Err(Error::NonFinite(format!("potential became {} at sweep {t}", v.phi)));
        }
        let val_rare_f1 = self.validation_rare_f1()?;
        Ok(SweepRecord {
            sweep: t,
            phi: v.phi,
            r: v.r,
            grad_norms,
            steps,
            val_rare_f1,
            beta: self.objective.beta,
            phi_start,
            curiosity: v.curiosity,
        })
    }

    fn validation_rare_f1(&self) -> Result<Option<f64>> {
        let (Some(val), Some(tail)) = (&self.val, &self.tail) else {
            return Ok(None);
        };
        let fp = self.model.predict(&val.x)?;
        let pred = threshold(&fp, &ThresholdVector::constant(self.model.num_labels(), self.cfg.eval_threshold))?;
        Ok(Some(rare_f1(&pred, val.ds.labels(), tail)?.macro_f1))
    }

    /// One ascent step on `block`, leaving `fwd` consistent with the new
    /// parameters. Returns the gradient norm and the step size taken.
    fn update_block(&mut self, block: usize, x: &Matrix, y: &LabelMatrix, peers: &[Matrix], fwd: &mut Forward) -> Result<(f64, f64)> {
        let g = self.objective.grad_block(&self.model, fwd, y, peers, block)?;
        let norm = l2_norm(&g);
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient of block {block} at sweep {}", self.sweep)));
        }
        let base = self.model.block_params(block);
        let eta = if block == 0 { self.cfg.eta0 } else { self.cfg.eta };
        let mut dir = g;
        let step = match self.cfg.step_rule {
            StepRule::Fixed => {
                clip(&mut dir, norm, self.cfg.grad_clip);
                eta
            }
            StepRule::Armijo { c, shrink, max_tries } => {
                let phi0 = self.objective.evaluate(&self.model, fwd, y, peers)?.phi;
                let gsq = norm * norm;
                let (obj, model) = (&self.objective, &mut self.model);
                armijo_step(phi0, gsq, eta, c, shrink, max_tries, |s| {
                    set_moved(model, block, &base, &dir, s);
                    let cand = refreshed(model, block, x, fwd)?;
                    let v = obj.evaluate(model, &cand, y, peers)?.phi;
                    Ok(if v.is_finite() { v } else { f64::NEG_INFINITY })
                })?
            }
            StepRule::Adam { beta1, beta2, epsilon } => {
                clip(&mut dir, norm, self.cfg.grad_clip);
                let st = self.adam.as_mut().expect("adam state exists for the adam rule");
                st.t[block] += 1;
                let tt = st.t[block] as i32;
                let (m, v) = (&mut st.m[block], &mut st.v[block]);
                for k in 0..dir.len() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * dir[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * dir[k] * dir[k];
                    let mh = m[k] / (1.0 - beta1.powi(tt));
                    let vh = v[k] / (1.0 - beta2.powi(tt));
                    dir[k] = mh / (vh.sqrt() + epsilon);
                }
                eta
            }
        };
        set_moved(&mut self.model, block, &base, &dir, step);
        *fwd = refreshed(&self.model, block, x, fwd)?;
        Ok((norm, step))
    }

    pub fn run(mut self) -> Result<(ModelState, Telemetry)> {
        while !self.is_done() {
            self.step_sweep()?;
        }
        Ok((self.model, self.telemetry))
    }
}

fn clip(g: &mut [f64], norm: f64, max: f64) {
    if max > 0.0 && norm > max {
        let s = max / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

fn set_moved(model: &mut ModelState, block: usize, base: &[f64], dir: &[f64], step: f64) {
    let moved: Vec<f64> = base.iter().zip(dir).map(|(b, d)| b + step * d).collect();
    model.set_block_params(block, &moved);
}

fn refreshed(model: &ModelState, block: usize, x: &Matrix, fwd: &Forward) -> Result<Forward> {
    if block == 0 {
        model.forward(x)
    } else {
        let mut f = fwd.clone();
        f.refresh_player(model, block - 1)?;
        Ok(f)
    }
}

fn select(x: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), x.cols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from_slice(x.row(r));
    }
    out
}

pub fn run_training(
    train: &Dataset,
    partition: Partition,
    cfg: TrainConfig,
    val: Option<&Dataset>,
) -> Result<(ModelState, Telemetry)> {
    Trainer::new(train, partition, cfg, val)?.run()
}
