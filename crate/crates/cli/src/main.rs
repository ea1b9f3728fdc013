//! `tailgame`: batch entry points for data generation, training,
//! evaluation and the numerical checks.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tailgame::dataset::{parse_multilabel_svmlight, Dataset, ParseOptions};
use tailgame::model::BackboneKind;
use tailgame::objective::WeightScheme;
use tailgame::trainer::StepRule;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tailgame", version, about = "Long-tail multi-label learning with curious cooperating players")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic long-tailed multi-label dataset.
    GenSynth(GenSynthArgs),
    /// Remove a fraction of the positives of every tail label.
    MakeRare(MakeRareArgs),
    /// Drop each positive label entry independently with a given probability.
    Noise(NoiseArgs),
    /// Build the overlapping player label partition for a dataset.
    Partition(PartitionArgs),
    /// Train the player game.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Compare analytic block gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Evaluate the tail-F1 lower bound certificate for a checkpoint.
    Boundcheck(BoundcheckArgs),
    /// Stationarity, specialization and label statistics for a checkpoint.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneArg {
    Identity,
    Mlp1,
}

impl From<BackboneArg> for BackboneKind {
    fn from(b: BackboneArg) -> Self {
        match b {
            BackboneArg::Identity => BackboneKind::Identity,
            BackboneArg::Mlp1 => BackboneKind::Mlp1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRuleArg {
    Fixed,
    Armijo,
    Adam,
}

impl From<StepRuleArg> for StepRule {
    fn from(s: StepRuleArg) -> Self {
        match s {
            StepRuleArg::Fixed => StepRule::Fixed,
            StepRuleArg::Armijo => StepRule::armijo(),
            StepRuleArg::Adam => StepRule::adam(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Uniform,
    InverseFrequency,
}

impl From<SchemeArg> for WeightScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Uniform => WeightScheme::Uniform,
            SchemeArg::InverseFrequency => WeightScheme::InverseFrequency,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 50)]
    pub labels: usize,
    #[arg(long, default_value_t = 2000)]
    pub instances: usize,
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    /// Power-law exponent of the label prevalences.
    #[arg(long, default_value_t = 1.5)]
    pub exponent: f64,
    /// Standard deviation of the label score noise.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.01)]
    pub pi_min: f64,
    #[arg(long, default_value_t = 0.4)]
    pub pi_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Extra instances from the same draw, written to `--holdout-out`.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long)]
    pub holdout_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MakeRareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of each tail label's positives to remove.
    #[arg(long, default_value_t = 0.3)]
    pub severity: f64,
    #[arg(long, default_value_t = 0.2)]
    pub tail_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct NoiseArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Probability of dropping each positive entry.
    #[arg(long)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PartitionArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub players: usize,
    /// Overlap ratio rho; total slots are round((1 + rho) L).
    #[arg(long, default_value_t = 0.2)]
    pub overlap: f64,
    /// Fraction of labels that may be duplicated (the rarest ones).
    #[arg(long)]
    pub tail_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags override the `--config` file, which overrides the defaults.
#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// TOML file with [data], [partition], [train] and [output] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub players: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub partition_file: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta_max: Option<f64>,
    #[arg(long)]
    pub ema_decay: Option<f64>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// Player step size (initial trial step under Armijo).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Backbone/fusion step size.
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long, value_enum)]
    pub step_rule: Option<StepRuleArg>,
    /// Minibatch size; full batch when absent.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub inner_iters: Option<usize>,
    #[arg(long, value_enum)]
    pub backbone: Option<BackboneArg>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_enum)]
    pub payoff_scheme: Option<SchemeArg>,
    /// Global gradient norm clip; 0 disables.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Checkpoint file, run directory, or `run/NAME` for `run/checkpoint.NAME.json`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Constant decision threshold; defaults to the training config's.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Tune per-label thresholds on this labelled set instead.
    #[arg(long, conflicts_with = "tau")]
    pub tune_on: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub labels: usize,
    #[arg(long, default_value_t = 3)]
    pub players: usize,
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    #[arg(long, default_value_t = 0.25)]
    pub overlap: f64,
    /// Check one backbone only; both when absent.
    #[arg(long, value_enum)]
    pub backbone: Option<BackboneArg>,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BoundcheckArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Stationarity tolerance on every block gradient norm.
    #[arg(long, default_value_t = 1e-3)]
    pub g_tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| CliError::Core(e.into()))
}

/// Echoes a command's resolved arguments next to its output.
pub fn write_resolved<T: Serialize>(path: &Path, args: &T) -> Result<(), CliError> {
    let text = toml::to_string(args).map_err(|e| CliError::Usage(format!("cannot serialise arguments: {e}")))?;
    write_text(path, &text)
}

pub fn load_dataset(path: &Path, features: Option<usize>, labels: Option<usize>) -> Result<Dataset, CliError> {
    let text = read_text(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let opts = ParseOptions { num_features: features, num_labels: labels, name };
    Ok(parse_multilabel_svmlight(&text, &opts)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(a) => commands::gen_synth(&a),
        Command::MakeRare(a) => commands::make_rare(&a),
        Command::Noise(a) => commands::noise(&a),
        Command::Partition(a) => commands::partition(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Boundcheck(a) => commands::boundcheck(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
