//! Evaluation: F1 family, Rare-F1, mAP, P@k, the micro tail-F1 certificate
//! and per-player specialization diagnostics.

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelMatrix, TailSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{FusedPrediction, ModelState, ThresholdVector};
use crate::objective::{global_payoff, tail_payoff, PayoffWeights};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(self, o: Counts) -> Counts {
        Counts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`, and 0 when all three counts are 0.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn same_shape(a_rows: usize, a_cols: usize, y: &LabelMatrix) -> Result<()> {
    if a_rows != y.rows() || a_cols != y.cols() {
        return Err(Error::dim(format!("{}x{} predictions against {}x{} labels", a_rows, a_cols, y.rows(), y.cols())));
    }
    Ok(())
}

pub fn label_counts(preds: &LabelMatrix, y: &LabelMatrix) -> Result<Vec<Counts>> {
    same_shape(preds.rows(), preds.cols(), y)?;
    let mut out = vec![Counts::default(); y.cols()];
    for r in 0..y.rows() {
        for (c, (&p, &t)) in preds.row(r).iter().zip(y.row(r)).enumerate() {
            match (p, t) {
                (true, true) => out[c].tp += 1,
                (true, false) => out[c].fp += 1,
                (false, true) => out[c].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub micro: Counts,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_label: Vec<Counts>,
    pub per_label_f1: Vec<f64>,
}

pub fn micro_macro_f1(preds: &LabelMatrix, y: &LabelMatrix) -> Result<F1Summary> {
    let per_label = label_counts(preds, y)?;
    let micro = per_label.iter().fold(Counts::default(), |a, &c| a.add(c));
    let per_label_f1: Vec<f64> = per_label.iter().map(Counts::f1).collect();
    let macro_f1 = if per_label_f1.is_empty() { 0.0 } else { per_label_f1.iter().sum::<f64>() / per_label_f1.len() as f64 };
    Ok(F1Summary {
        micro,
        micro_precision: micro.precision(),
        micro_recall: micro.recall(),
        micro_f1: micro.f1(),
        macro_f1,
        per_label,
        per_label_f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareF1 {
    /// Mean per-label F1 over the tail.
    pub macro_f1: f64,
    /// F1 of the tail counts summed over labels.
    pub micro_f1: f64,
    pub counts: Counts,
}

pub fn rare_f1(preds: &LabelMatrix, y: &LabelMatrix, tail: &TailSet) -> Result<RareF1> {
    if tail.tail_labels.is_empty() {
        return Err(Error::DegenerateTail("empty tail set".into()));
    }
    let per = label_counts(preds, y)?;
    if let Some(&l) = tail.tail_labels.iter().find(|&&l| l >= per.len()) {
        return Err(Error::dim(format!("tail label {l} out of range")));
    }
    let counts = tail.tail_labels.iter().fold(Counts::default(), |a, &l| a.add(per[l]));
    let macro_f1 = tail.tail_labels.iter().map(|&l| per[l].f1()).sum::<f64>() / tail.tail_labels.len() as f64;
    Ok(RareF1 { macro_f1, micro_f1: counts.f1(), counts })
}

/// Descending score order, ties by ascending instance index.
fn ranking(scores: &Matrix, col: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.rows()).collect();
    idx.sort_by(|&a, &b| scores[(b, col)].total_cmp(&scores[(a, col)]).then(a.cmp(&b)));
    idx
}

/// All-points average precision of one label; `None` without positives.
pub fn average_precision(scores: &Matrix, y: &LabelMatrix, label: usize) -> Option<f64> {
    let p = y.column_count(label);
    if p == 0 {
        return None;
    }
    let (mut hits, mut acc) = (0usize, 0.0);
    for (t, &m) in ranking(scores, label).iter().enumerate() {
        if y.get(m, label) {
            hits += 1;
            acc += hits as f64 / (t + 1) as f64;
        }
    }
    Some(acc / p as f64)
}

pub fn mean_average_precision(scores: &Matrix, y: &LabelMatrix) -> Result<f64> {
    same_shape(scores.rows(), scores.cols(), y)?;
    let aps: Vec<f64> = (0..y.cols()).filter_map(|l| average_precision(scores, y, l)).collect();
    if aps.is_empty() {
        return Err(Error::UndefinedMap);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Mean over instances of the positive fraction among the top `k` labels;
/// ties by ascending label id.
pub fn precision_at_k(scores: &Matrix, y: &LabelMatrix, k: usize) -> Result<f64> {
    same_shape(scores.rows(), scores.cols(), y)?;
    if k == 0 || k > y.cols() {
        return Err(Error::config(format!("k must lie in 1..={}, got {k}", y.cols())));
    }
    let m = y.rows();
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for r in 0..m {
        let mut idx: Vec<usize> = (0..y.cols()).collect();
        idx.sort_by(|&a, &b| scores[(r, b)].total_cmp(&scores[(r, a)]).then(a.cmp(&b)));
        let hits = idx[..k].iter().filter(|&&l| y.get(r, l)).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / m as f64)
}

/// `max(1 / -ln(1 - tau), 1 / -ln(tau))`.
pub fn kappa(tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!("threshold must lie in (0, 1), got {tau}")));
    }
    Ok((1.0 / -(1.0 - tau).ln()).max(1.0 / -tau.ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub tau: f64,
    pub kappa: f64,
    pub z: f64,
    pub z_tail: f64,
    pub w_min_tail: f64,
    pub mu_pos_tail: f64,
    pub r: f64,
    pub r_tail: f64,
    /// `1 - kappa Z (-R) / (2 mu_pos_tail w_min_tail)`.
    pub bound: f64,
    /// Same with `Z_T` and `R_T`.
    pub bound_tail_only: f64,
    /// `kappa Z (-R) / w_min_tail`, the certified bound on `mu_FP + mu_FN`.
    pub error_mass_bound: f64,
    /// Worst-case micro tail F1 given `mu_FP + mu_FN <= error_mass_bound`.
    pub bound_corrected: f64,
    pub observed_micro_tail_f1: f64,
    pub counts: Counts,
    pub num_instances: usize,
    pub slack: f64,
    pub slack_tail_only: f64,
    pub slack_corrected: f64,
}

/// Worst-case `2(P - B)/(2P - B)` when `B <= P`, else 0.
pub fn corrected_f1_bound(mu_pos: f64, error_mass: f64) -> f64 {
    if error_mass <= mu_pos {
        2.0 * (mu_pos - error_mass) / (2.0 * mu_pos - error_mass)
    } else {
        0.0
    }
}

#[allow(clippy::too_many_arguments)]
pub fn rare_f1_lower_bound(
    r_value: f64,
    r_tail: f64,
    tau: f64,
    pw: &PayoffWeights,
    tail: &TailSet,
    mu_pos_tail: f64,
) -> Result<BoundCertificate> {
    if !(mu_pos_tail > 0.0) {
        return Err(Error::NoTailPositives);
    }
    if r_value > 0.0 || r_tail > 0.0 {
        return Err(Error::config("payoff values must be <= 0"));
    }
    let k = kappa(tau)?;
    let z_tail = pw.z_over(&tail.tail_labels);
    let w_min = pw.w_min_over(&tail.tail_labels);
    let error_mass = k * pw.z * (-r_value) / w_min;
    Ok(BoundCertificate {
        tau,
        kappa: k,
        z: pw.z,
        z_tail,
        w_min_tail: w_min,
        mu_pos_tail,
        r: r_value,
        r_tail,
        bound: 1.0 - error_mass / (2.0 * mu_pos_tail),
        bound_tail_only: 1.0 - k * z_tail * (-r_tail) / (2.0 * mu_pos_tail * w_min),
        error_mass_bound: error_mass,
        bound_corrected: corrected_f1_bound(mu_pos_tail, error_mass),
        observed_micro_tail_f1: f64::NAN,
        counts: Counts::default(),
        num_instances: 0,
        slack: f64::NAN,
        slack_tail_only: f64::NAN,
        slack_corrected: f64::NAN,
    })
}

/// Evaluates both sides of the certificate on one labelled set, with
/// predictions `p_hat >= tau`.
pub fn certify(fp: &FusedPrediction, y: &LabelMatrix, pw: &PayoffWeights, tail: &TailSet, tau: f64) -> Result<BoundCertificate> {
    if !(tau > fp.eps && tau < 1.0 - fp.eps) {
        return Err(Error::config(format!("threshold must lie in (eps, 1 - eps), got {tau}")));
    }
    let r = global_payoff(fp, y, pw)?;
    let r_t = tail_payoff(fp, y, pw, &tail.tail_labels)?;
    let m = y.rows();
    let pos: usize = tail.tail_labels.iter().map(|&l| y.column_count(l)).sum();
    let mut cert = rare_f1_lower_bound(r, r_t, tau, pw, tail, pos as f64 / m as f64)?;
    let mut counts = Counts::default();
    for r in 0..m {
        for &l in &tail.tail_labels {
            match (fp.probs[(r, l)] >= tau, y.get(r, l)) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                _ => {}
            }
        }
    }
    let f = counts.f1();
    cert.observed_micro_tail_f1 = f;
    cert.counts = counts;
    cert.num_instances = m;
    cert.slack = f - cert.bound;
    cert.slack_tail_only = f - cert.bound_tail_only;
    cert.slack_corrected = f - cert.bound_corrected;
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub group: String,
    pub num_labels: usize,
    /// Percent of the group's overlap labels on which each player is best.
    pub share: Vec<f64>,
    /// Mean rank of each player over the group labels it owns (NaN if none).
    pub mean_rank: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecializationReport {
    /// Labels with at least two active players, ascending.
    pub labels: Vec<usize>,
    /// `accuracy[i][k]` for player `i` on `labels[k]`; NaN where inactive.
    pub accuracy: Vec<Vec<f64>>,
    pub rank: Vec<Vec<f64>>,
    pub groups: Vec<GroupShare>,
    pub note: Option<String>,
}

/// Ranks (1 = best) with averaged ties over `(player, accuracy)` pairs.
fn average_ranks(entries: &[(usize, f64)]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..entries.len()).collect();
    idx.sort_by(|&a, &b| entries[b].1.total_cmp(&entries[a].1));
    let mut ranks = vec![0.0; entries.len()];
    let mut s = 0;
    while s < idx.len() {
        let mut e = s;
        while e + 1 < idx.len() && entries[idx[e + 1]].1 == entries[idx[s]].1 {
            e += 1;
        }
        let r = (s + e) as f64 / 2.0 + 1.0;
        for &k in &idx[s..=e] {
            ranks[k] = r;
        }
        s = e + 1;
    }
    ranks
}

/// Builds the report from per-player accuracies on the multi-player labels.
pub fn specialization_from_accuracy(
    labels: &[usize],
    active: &[Vec<usize>],
    accuracy: Vec<Vec<f64>>,
    tail: &TailSet,
) -> SpecializationReport {
    let n = accuracy.len();
    let mut rank = vec![vec![f64::NAN; labels.len()]; n];
    let mut credit = vec![vec![0.0; labels.len()]; n];
    for k in 0..labels.len() {
        let entries: Vec<(usize, f64)> = active[k].iter().map(|&i| (i, accuracy[i][k])).collect();
        for (&(i, _), r) in entries.iter().zip(average_ranks(&entries)) {
            rank[i][k] = r;
        }
        let best = entries.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = entries.iter().filter(|e| e.1 == best).map(|e| e.0).collect();
        for &i in &winners {
            credit[i][k] = 1.0 / winners.len() as f64;
        }
    }
    let mut groups = Vec::new();
    for (name, in_tail) in [("rare", true), ("frequent", false)] {
        let ks: Vec<usize> = (0..labels.len()).filter(|&k| tail.contains(labels[k]) == in_tail).collect();
        let share = (0..n)
            .map(|i| if ks.is_empty() { 0.0 } else { 100.0 * ks.iter().map(|&k| credit[i][k]).sum::<f64>() / ks.len() as f64 })
            .collect();
        let mean_rank = (0..n)
            .map(|i| {
                let rs: Vec<f64> = ks.iter().map(|&k| rank[i][k]).filter(|r| !r.is_nan()).collect();
                if rs.is_empty() {
                    f64::NAN
                } else {
                    rs.iter().sum::<f64>() / rs.len() as f64
                }
            })
            .collect();
        groups.push(GroupShare { group: name.into(), num_labels: ks.len(), share, mean_rank });
    }
    let note = labels.is_empty().then(|| "no label has two or more active players".to_string());
    SpecializationReport { labels: labels.to_vec(), accuracy, rank, groups, note }
}

pub fn specialization_report(
    model: &ModelState,
    x: &Matrix,
    y: &LabelMatrix,
    tail: &TailSet,
    thresholds: &ThresholdVector,
) -> Result<SpecializationReport> {
    let fwd = model.forward(x)?;
    same_shape(fwd.fused.rows(), fwd.fused.cols(), y)?;
    let p = &model.partition;
    let labels: Vec<usize> = (0..p.num_labels()).filter(|&l| p.active_players(l).len() >= 2).collect();
    let n = model.num_players();
    let m = y.rows();
    let mut accuracy = vec![vec![f64::NAN; labels.len()]; n];
    let mut active = Vec::with_capacity(labels.len());
    for (k, &l) in labels.iter().enumerate() {
        for &i in p.active_players(l) {
            let c = p.local_index(i, l).unwrap();
            let correct = (0..m).filter(|&r| (fwd.posts[i][(r, c)] > thresholds.values[l]) == y.get(r, l)).count();
            accuracy[i][k] = ratio(correct, m);
        }
        active.push(p.active_players(l).to_vec());
    }
    Ok(specialization_from_accuracy(&labels, &active, accuracy, tail))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub rare_f1: Option<f64>,
    pub micro_tail_f1: Option<f64>,
    pub map: Option<f64>,
    pub p_at_1: Option<f64>,
    pub p_at_3: Option<f64>,
    pub p_at_5: Option<f64>,
    pub micro: Counts,
    pub per_label: Vec<Counts>,
    pub per_label_f1: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub threshold_fallback_labels: Vec<usize>,
    pub zero_f1_convention: String,
}

impl MetricsReport {
    pub fn per_label_csv(&self) -> String {
        let mut s = String::from("label,tp,fp,fn,f1,threshold\n");
        for (l, (c, f)) in self.per_label.iter().zip(&self.per_label_f1).enumerate() {
            s.push_str(&format!("{l},{},{},{},{f},{}\n", c.tp, c.fp, c.fn_, self.thresholds[l]));
        }
        s
    }
}

/// Thresholded metrics use the model's strict rule; ranking metrics use the
/// raw fused scores.
pub fn evaluate(fp: &FusedPrediction, y: &LabelMatrix, tail: Option<&TailSet>, t: &ThresholdVector) -> Result<MetricsReport> {
    let preds = crate::model::threshold(fp, t)?;
    let f = micro_macro_f1(&preds, y)?;
    let rare = tail.map(|t| rare_f1(&preds, y, t)).transpose()?;
    let map = match mean_average_precision(&fp.probs, y) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMap) => None,
        Err(e) => return Err(e),
    };
    let pk = |k: usize| if k <= y.cols() { precision_at_k(&fp.probs, y, k).ok() } else { None };
    Ok(MetricsReport {
        micro_precision: f.micro_precision,
        micro_recall: f.micro_recall,
        micro_f1: f.micro_f1,
        macro_f1: f.macro_f1,
        rare_f1: rare.as_ref().map(|r| r.macro_f1),
        micro_tail_f1: rare.as_ref().map(|r| r.micro_f1),
        map,
        p_at_1: pk(1),
        p_at_3: pk(3),
        p_at_5: pk(5),
        micro: f.micro,
        per_label: f.per_label,
        per_label_f1: f.per_label_f1,
        thresholds: t.values.clone(),
        threshold_fallback_labels: t.fallback.clone(),
        zero_f1_convention: "per-label F1 is 0 when TP = FP = FN = 0".into(),
    })
}
