//! `modfuse`: simulate, train, decode, agree and report.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "modfuse", version, about = "Fuse conflicting weekly modality reports with a shared hidden Markov model")]
pub struct Cli {
    /// Run configuration (JSON with optional `pipeline` and `simulation` sections).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for simulation and random initializations.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic corpus with known truth.
    Simulate,
    /// Fit the model to reports by Baum-Welch.
    Train(TrainArgs),
    /// Decode every district-week with fitted parameters.
    Decode(DecodeArgs),
    /// Agreement between sources and the model.
    Agree(AgreeArgs),
    /// Weekly modality shares, optionally stratified.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Random,
    SmoothedTable,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelPolicy {
    /// Relabel clusters by the best-matching bijection.
    Auto,
    /// Keep the state order of the fit.
    Keep,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Reports file: source,leaid,report_date,modality.
    #[arg(long)]
    pub reports: PathBuf,
    /// District metadata file.
    #[arg(long)]
    pub metadata: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Ignore reports dated after this day.
    #[arg(long)]
    pub cutoff_date: Option<NaiveDate>,
    #[arg(long, value_enum, default_value = "random")]
    pub init: InitKind,
    /// Parameter file for `--init file`.
    #[arg(long)]
    pub init_file: Option<PathBuf>,
    /// Random initializations; the best final likelihood wins.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub pseudocount: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub labels: LabelPolicy,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Fitted parameter file.
    #[arg(long)]
    pub params: PathBuf,
    #[command(flatten)]
    pub inputs: InputArgs,
    /// posterior or viterbi.
    #[arg(long, default_value = "posterior")]
    pub mode: String,
    #[arg(long, default_value_t = modfuse::decode::DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    /// Decode file written by `decode`.
    #[arg(long)]
    pub decodes: PathBuf,
    #[arg(long)]
    pub reports: PathBuf,
    /// Sample unit of the t-test: district or week.
    #[arg(long, default_value = "district")]
    pub unit: String,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub decodes: PathBuf,
    #[arg(long)]
    pub metadata: PathBuf,
    /// none, state or urban_rural.
    #[arg(long, default_value = "none")]
    pub stratify: String,
    /// Dates (comma separated) for per-state snapshots.
    #[arg(long, value_delimiter = ',')]
    pub snapshot_weeks: Vec<NaiveDate>,
    /// Put districts without a stratum value in `unknown` instead of failing.
    #[arg(long)]
    pub allow_unknown_stratum: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|c| c.downcast_ref::<modfuse::Error>().is_some_and(modfuse::Error::is_numerical));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
