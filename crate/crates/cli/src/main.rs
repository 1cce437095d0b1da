//! `offpolicy`: pessimistic off-policy evaluation, selection and learning
//! from logged bandit feedback.
//!
//! Exit codes: 0 success, 1 compute failure or failed study cells, 2 usage
//! or validation error.

mod commands;
mod config;
mod policy;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::LambdaChoice;
use crate::policy::PolicySpec;

#[derive(Debug, Parser)]
#[command(name = "offpolicy", version, about = "Pessimistic off-policy evaluation, selection and learning")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Confidence parameter in (0, 1].
    #[arg(long, global = true)]
    pub delta: Option<f64>,

    /// Worker threads; 0 or unset uses every core.
    #[arg(long, global = true, env = "OFFPOLICY_THREADS")]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Risk bounds for one policy on a logged CSV.
    Evaluate(EvaluateArgs),
    /// Choose among candidate policies from a logged CSV.
    Select(SelectArgs),
    /// Train a Gaussian-posterior policy by minimizing a PAC-Bayesian bound.
    Learn(LearnArgs),
    /// Run an experiment matrix or a named preset.
    Study(StudyArgs),
    /// Turn a labeled multiclass CSV into logged bandit feedback.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Logged CSV (feature_*, action, cost, propensity[, label]).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of actions, when the CSV has no sidecar.
    #[arg(long)]
    pub actions: Option<usize>,
    #[arg(long)]
    pub policy: Option<PolicySpec>,
    /// Comma-separated: LS, IX, cIPS-L=1, cIPS-EB, sub-Gaussian.
    #[arg(long, value_delimiter = ',')]
    pub bounds: Option<Vec<String>>,
    /// A positive number or inv-sqrt-n.
    #[arg(long)]
    pub lambda: Option<LambdaChoice>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub actions: Option<usize>,
    /// NAME=POLICY; repeatable.
    #[arg(long = "candidate", value_parser = parse_candidate)]
    pub candidates: Vec<(String, PolicySpec)>,
    /// IPS, SN, cIPS-EB, IX, cIPS-L=1 or LS.
    #[arg(long)]
    pub method: Option<String>,
    /// A positive number, inv-sqrt-n or union-bound.
    #[arg(long)]
    pub lambda: Option<LambdaChoice>,
    /// Candidate name of the logging policy, for outcome classification.
    #[arg(long)]
    pub behavior: Option<String>,
    /// Reward noise of the labeled environment; enables exact risks.
    #[arg(long)]
    pub oracle_epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub actions: Option<usize>,
    /// LS-LIN or IX.
    #[arg(long)]
    pub method: Option<String>,
    /// JSON Gaussian posterior; defaults to a zero-mean prior.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long)]
    pub prior_sigma: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Epochs to run (added to the checkpoint's count when resuming).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size; full batch when unset.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// tightness-desk, tightness-grid, coverage, ops-desk, ops-paper or opl-desk.
    #[arg(long, visible_alias = "paper-experiment")]
    pub preset: Option<String>,
    /// Directory holding the bundled CSV datasets.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Override the replication count of a coverage study.
    #[arg(long)]
    pub replications: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Multiclass CSV with a label column.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Logging policy; defaults to uniform.
    #[arg(long)]
    pub behavior: Option<PolicySpec>,
    /// Reward noise in [0, 0.5).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Standardize features to zero mean and unit variance.
    #[arg(long)]
    pub standardize: bool,
    /// Append a constant-1 feature.
    #[arg(long)]
    pub bias: bool,
    /// Output CSV; defaults to `<out>/logged.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_candidate(s: &str) -> Result<(String, PolicySpec), String> {
    let (name, spec) = s.split_once('=').ok_or_else(|| format!("expected NAME=POLICY, got {s:?}"))?;
    let spec = spec.parse().map_err(|e: anyhow::Error| e.to_string())?;
    Ok((name.to_string(), spec))
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or inputs; nothing was computed.
    Usage(anyhow::Error),
    /// The computation itself failed.
    Compute(anyhow::Error),
}

pub trait FailureExt<T> {
    fn usage(self) -> Result<T, Failure>;
    fn compute(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> FailureExt<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn compute(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Compute(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
