use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tailgame::dataset::{
    flip_label_noise, generate_synthetic_longtail, make_rare_variant, split_head_tail, write_multilabel_svmlight,
    Dataset, LabelStats, RareSplitConfig, SynthConfig, TailMode, TailSet,
};
use tailgame::metrics::{certify, evaluate, specialization_report, MetricsReport, SpecializationReport};
use tailgame::model::{tune_thresholds, BackboneKind, ThresholdVector};
use tailgame::objective::{finite_diff_check, random_check_fixture, GradCheckReport, PayoffWeights};
use tailgame::partition::{build_partition, build_partition_with_tail, Partition};
use tailgame::trainer::{detect_stationarity, BatchMode, Checkpoint, Trainer};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{
    load_dataset, read_text, to_json, write_resolved, write_text, BoundcheckArgs, DiagnoseArgs, EvalArgs,
    GenSynthArgs, GradcheckArgs, MakeRareArgs, NoiseArgs, PartitionArgs, TrainArgs,
};

/// `out` with `suffix` appended to the file name.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = out.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), CliError> {
    write_text(path, &write_multilabel_svmlight(ds))
}

/// Accepts a checkpoint file, a run directory (its final checkpoint) or
/// `dir/NAME` for `dir/checkpoint.NAME.json`.
pub fn resolve_checkpoint(p: &Path) -> Result<PathBuf, CliError> {
    if p.is_file() {
        return Ok(p.to_path_buf());
    }
    if p.is_dir() {
        return Ok(p.join("checkpoint.final.json"));
    }
    if let (Some(dir), Some(name)) = (p.parent(), p.file_name()) {
        let c = dir.join(format!("checkpoint.{}.json", name.to_string_lossy()));
        if c.is_file() {
            return Ok(c);
        }
    }
    Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such checkpoint")))
}

fn load_checkpoint(p: &Path) -> Result<Checkpoint, CliError> {
    let path = resolve_checkpoint(p)?;
    Ok(Checkpoint::from_json(&read_text(&path)?)?)
}

fn load_for(ck: &Checkpoint, path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path, Some(ck.model.input_dim()), Some(ck.model.num_labels()))
}

pub fn gen_synth(a: &GenSynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        noise: a.noise,
        pi_min: a.pi_min,
        pi_max: a.pi_max,
        ..SynthConfig::new(a.labels, a.instances + a.holdout, a.features, a.exponent, a.seed)
    };
    let ds = generate_synthetic_longtail(&cfg)?;
    if a.holdout > 0 {
        let Some(ho) = &a.holdout_out else {
            return Err(CliError::Usage("--holdout needs --holdout-out".into()));
        };
        let train: Vec<usize> = (0..a.instances).collect();
        let rest: Vec<usize> = (a.instances..a.instances + a.holdout).collect();
        write_dataset(&a.out, &ds.subset(&train, "train"))?;
        write_dataset(ho, &ds.subset(&rest, "holdout"))?;
    } else {
        write_dataset(&a.out, &ds)?;
    }
    write_text(&sidecar(&a.out, ".stats.csv"), &LabelStats::compute(&ds)?.to_csv())?;
    write_resolved(&sidecar(&a.out, ".resolved"), a)
}

#[derive(Serialize)]
struct RareReport<'a> {
    tail: &'a TailSet,
    flipped: &'a [usize],
    achieved_ratios: &'a [f64],
    skipped_labels: &'a [usize],
}

pub fn make_rare(a: &MakeRareArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data, None, None)?;
    let cfg = RareSplitConfig { severity: a.severity, tail_fraction: a.tail_fraction, seed: a.seed };
    let v = make_rare_variant(&ds, &cfg)?;
    write_dataset(&a.out, &v.dataset)?;
    let report = RareReport {
        tail: &v.tail,
        flipped: &v.flipped,
        achieved_ratios: &v.achieved_ratios,
        skipped_labels: &v.skipped_labels,
    };
    write_text(&sidecar(&a.out, ".report.json"), &to_json(&report)?)?;
    write_resolved(&sidecar(&a.out, ".resolved"), a)
}

pub fn noise(a: &NoiseArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data, None, None)?;
    write_dataset(&a.out, &flip_label_noise(&ds, a.rate, a.seed)?)?;
    write_resolved(&sidecar(&a.out, ".resolved"), a)
}

pub fn partition(a: &PartitionArgs) -> Result<(), CliError> {
    let stats = LabelStats::compute(&load_dataset(&a.data, None, None)?)?;
    let p = match a.tail_fraction {
        Some(q) => {
            let tail = split_head_tail(&stats, q, TailMode::BottomFraction)?;
            build_partition_with_tail(&stats, a.players, a.overlap, &tail, a.seed)?
        }
        None => build_partition(&stats, a.players, a.overlap, a.seed)?,
    };
    write_text(&a.out, &p.to_text())?;
    println!(
        "players={} labels={} slots={} coverage={:.4}",
        p.num_players(),
        p.num_labels(),
        p.total_slots(),
        p.coverage_factor()
    );
    write_resolved(&sidecar(&a.out, ".resolved"), a)
}

fn apply_overrides(rc: &mut RunConfig, a: &TrainArgs) {
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v.into();
            }
        };
    }
    if a.data.is_some() {
        rc.data.train = a.data.clone();
    }
    if a.val.is_some() {
        rc.data.val = a.val.clone();
    }
    if a.partition_file.is_some() {
        rc.partition.file = a.partition_file.clone();
    }
    set!(a.players, rc.partition.players);
    set!(a.overlap, rc.partition.overlap);
    set!(a.alpha, rc.train.curiosity.alpha);
    set!(a.beta_max, rc.train.curiosity.beta_max);
    set!(a.ema_decay, rc.train.curiosity.ema_decay);
    set!(a.sweeps, rc.train.sweeps);
    set!(a.eta, rc.train.eta);
    set!(a.eta0, rc.train.eta0);
    set!(a.step_rule, rc.train.step_rule);
    set!(a.inner_iters, rc.train.inner_iters);
    set!(a.backbone, rc.train.backbone);
    set!(a.hidden_dim, rc.train.hidden_dim);
    set!(a.seed, rc.train.seed);
    set!(a.eps, rc.train.eps);
    set!(a.payoff_scheme, rc.train.payoff_scheme);
    set!(a.grad_clip, rc.train.grad_clip);
    set!(a.checkpoint_every, rc.output.checkpoint_every);
    if let Some(size) = a.batch_size {
        rc.train.batch = BatchMode::Minibatch { size };
    }
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    data: String,
    sweep: usize,
    thresholds: &'a str,
    metrics: MetricsReport,
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut rc, a);
    let resumed = match &a.resume {
        Some(p) => {
            let mut ck = load_checkpoint(p)?;
            // only the sweep budget may change on resume
            let sweeps = a.sweeps.unwrap_or(ck.config.sweeps);
            ck.config.sweeps = sweeps;
            rc.train = ck.config.clone();
            Some(ck)
        }
        None => None,
    };
    rc.validate()?;
    let train_path = rc.data.train.clone().expect("validated");
    let train_ds = load_dataset(&train_path, None, None)?;
    let val_ds = match &rc.data.val {
        Some(p) => Some(load_dataset(p, Some(train_ds.num_features()), Some(train_ds.num_labels()))?),
        None => None,
    };

    let mut trainer = match resumed {
        Some(ck) => Trainer::from_checkpoint(ck, &train_ds, val_ds.as_ref())?,
        None => {
            let p = match &rc.partition.file {
                Some(f) => Partition::from_text(&read_text(f)?)?,
                None => build_partition(
                    &LabelStats::compute(&train_ds)?,
                    rc.partition.players,
                    rc.partition.overlap,
                    rc.train.seed,
                )?,
            };
            Trainer::new(&train_ds, p, rc.train.clone(), val_ds.as_ref())?
        }
    };

    let out = &a.out;
    write_text(&out.join("config.resolved"), &rc.to_toml()?)?;
    write_text(&out.join("partition.txt"), &trainer.model().partition.to_text())?;
    let every = rc.output.checkpoint_every;
    while !trainer.is_done() {
        let last_good = trainer.checkpoint();
        if let Err(e) = trainer.step_sweep() {
            last_good.save(&out.join("checkpoint.last-good.json"))?;
            return Err(e.into());
        }
        if every > 0 && trainer.sweep() % every == 0 {
            trainer.checkpoint().save(&out.join(format!("checkpoint.{:04}.json", trainer.sweep())))?;
        }
    }
    trainer.checkpoint().save(&out.join("checkpoint.final.json"))?;
    write_text(&out.join("telemetry.csv"), &trainer.telemetry().to_csv())?;

    let (eval_ds, eval_path) = match (&val_ds, &rc.data.val) {
        (Some(v), Some(p)) => (v, p),
        _ => (&train_ds, &train_path),
    };
    let fp = trainer.model().predict(&eval_ds.dense_features())?;
    let t = ThresholdVector::constant(eval_ds.num_labels(), rc.train.eval_threshold);
    let metrics = evaluate(&fp, eval_ds.labels(), trainer.tail(), &t)?;
    let file = MetricsFile { data: eval_path.display().to_string(), sweep: trainer.sweep(), thresholds: "constant", metrics };
    write_text(&out.join("metrics.json"), &to_json(&file)?)?;

    if let Some(r) = trainer.telemetry().last() {
        println!("sweep={} phi={} R={} rare_f1={:?}", r.sweep, r.phi, r.r, file.metrics.rare_f1);
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_for(&ck, &a.data)?;
    let fp = ck.model.predict(&ds.dense_features())?;
    let (t, rule) = match &a.tune_on {
        Some(p) => {
            let v = load_for(&ck, p)?;
            (tune_thresholds(&ck.model.predict(&v.dense_features())?, v.labels())?, "tuned")
        }
        None => (ThresholdVector::constant(ds.num_labels(), a.tau.unwrap_or(ck.config.eval_threshold)), "constant"),
    };
    let metrics = evaluate(&fp, ds.labels(), ck.tail.as_ref(), &t)?;
    let csv = metrics.per_label_csv();
    let file = MetricsFile { data: a.data.display().to_string(), sweep: ck.sweep, thresholds: rule, metrics };
    let json = to_json(&file)?;
    print!("{json}");
    if let Some(dir) = &a.out {
        write_text(&dir.join("metrics.json"), &json)?;
        write_text(&dir.join("per_label.csv"), &csv)?;
        write_resolved(&dir.join("eval.resolved"), a)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GradcheckEntry {
    backbone: BackboneKind,
    report: GradCheckReport,
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let kinds = match a.backbone {
        Some(b) => vec![b.into()],
        None => vec![BackboneKind::Identity, BackboneKind::Mlp1],
    };
    let mut entries = Vec::new();
    for kind in kinds {
        let f = random_check_fixture(a.seed, a.labels, a.players, a.overlap, a.instances, kind)?;
        let report = finite_diff_check(&f.model, &f.x, &f.y, &f.peers, &f.objective, a.h, a.tol, None)?;
        println!("backbone {kind:?}");
        print!("{}", report.to_text());
        entries.push(GradcheckEntry { backbone: kind, report });
    }
    if let Some(dir) = &a.out {
        write_text(&dir.join("gradcheck.json"), &to_json(&entries)?)?;
        write_resolved(&dir.join("gradcheck.resolved"), a)?;
    }
    match entries.iter().find(|e| !e.report.pass) {
        Some(e) => Err(CliError::Check(format!("{:?} backbone exceeds tolerance {}", e.backbone, a.tol))),
        None => Ok(()),
    }
}

fn checkpoint_tail(ck: &Checkpoint) -> Result<&TailSet, CliError> {
    ck.tail
        .as_ref()
        .ok_or_else(|| tailgame::Error::DegenerateTail("checkpoint has no tail split".into()).into())
}

pub fn boundcheck(a: &BoundcheckArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_for(&ck, &a.data)?;
    let fp = ck.model.predict(&ds.dense_features())?;
    let pw = PayoffWeights::new(ck.config.payoff_scheme, &ck.train_freq);
    let cert = certify(&fp, ds.labels(), &pw, checkpoint_tail(&ck)?, a.tau)?;
    let json = to_json(&cert)?;
    print!("{json}");
    if let Some(dir) = &a.out {
        write_text(&dir.join("certificate.json"), &json)?;
        write_resolved(&dir.join("boundcheck.resolved"), a)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Diagnosis {
    sweep: usize,
    g_tol: f64,
    stationary: Option<bool>,
    final_grad_norms: Vec<f64>,
    /// Sweeps whose potential fell by more than 1e-10.
    phi_drops: usize,
    worst_phi_drop: f64,
    coverage_factor: f64,
    specialization: SpecializationReport,
    label_stats: LabelStats,
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_for(&ck, &a.data)?;
    let t = ThresholdVector::constant(ds.num_labels(), a.tau.unwrap_or(ck.config.eval_threshold));
    let spec = specialization_report(&ck.model, &ds.dense_features(), ds.labels(), checkpoint_tail(&ck)?, &t)?;
    let phi = ck.telemetry.phi_trace();
    let drops: Vec<f64> = phi.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 1e-10).collect();
    let d = Diagnosis {
        sweep: ck.sweep,
        g_tol: a.g_tol,
        stationary: detect_stationarity(&ck.telemetry, a.g_tol).ok(),
        final_grad_norms: ck.telemetry.last().map(|r| r.grad_norms.clone()).unwrap_or_default(),
        phi_drops: drops.len(),
        worst_phi_drop: drops.iter().copied().fold(0.0, f64::max),
        coverage_factor: ck.model.partition.coverage_factor(),
        specialization: spec,
        label_stats: LabelStats::compute(&ds)?,
    };
    let json = to_json(&d)?;
    print!("{json}");
    if let Some(dir) = &a.out {
        write_text(&dir.join("diagnose.json"), &json)?;
        write_resolved(&dir.join("diagnose.resolved"), a)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_paths_resolve_three_ways() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        std::fs::create_dir(&run).unwrap();
        for name in ["checkpoint.final.json", "checkpoint.0010.json"] {
            std::fs::write(run.join(name), "{}").unwrap();
        }
        let file = run.join("checkpoint.0010.json");
        assert_eq!(resolve_checkpoint(&file).unwrap(), file);
        assert_eq!(resolve_checkpoint(&run).unwrap(), run.join("checkpoint.final.json"));
        assert_eq!(resolve_checkpoint(&run.join("0010")).unwrap(), file);
        assert_eq!(resolve_checkpoint(&run.join("final")).unwrap(), run.join("checkpoint.final.json"));
        assert!(matches!(resolve_checkpoint(&run.join("0020")), Err(CliError::Io { .. })));
    }

    #[test]
    fn sidecar_appends_to_the_file_name() {
        assert_eq!(sidecar(Path::new("out/a.svm"), ".resolved"), PathBuf::from("out/a.svm.resolved"));
    }
}
