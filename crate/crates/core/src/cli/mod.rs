//! Command-line front end. The binary is a thin wrapper around [`main_with_args`].

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    compare, evaluate, load_dataset, parse_seed_list, read_runset, run, sweep, synth, train_student, train_teacher,
    write_runset, CompareSummary, RunRecord, RunSet, TeacherSummary,
};
pub use config::{ExperimentConfig, PathsConfig, SweepConfig};

use crate::distill::LossMode;
use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "histodistill", version, about = "Grade-conditioned distillation from embedding bags into an image model")]
pub struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: images, masks, manifest and embedding bags.
    Synth(SynthArgs),
    /// Train the bag classifier and export the frozen embedding bank.
    TrainTeacher,
    /// Cross-validated student training for one loss mode and lambda.
    TrainStudent(TrainStudentArgs),
    /// Metrics, ROC tables and plots for a run set.
    Evaluate(EvaluateArgs),
    /// Paired Wilcoxon test of Sens@60 csPCa between two run sets.
    Compare(CompareArgs),
    /// Train and evaluate the whole lambda grid.
    Sweep(SweepArgs),
    /// Print the effective config as TOML.
    PrintConfig,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace an existing dataset.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainStudentArgs {
    #[arg(long)]
    pub loss: Option<LossMode>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Seeds as a list or range: `0,1,2`, `0..7`, `0..=6`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Folds to train, same syntax as `--seeds`.
    #[arg(long)]
    pub folds: Option<String>,
    /// Output directory; `<out_dir>/<mode>_l<lambda>` by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub runset: PathBuf,
    /// Report directory; `report/` next to the run set by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write heatmaps of validation cores for every run.
    #[arg(long)]
    pub heatmaps: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Baseline run set.
    #[arg(long)]
    pub a: PathBuf,
    /// Treatment run set; differences are b - a.
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub folds: Option<String>,
    /// Comma-separated lambdas, overriding `[sweep] lambdas`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON error object written to stderr on failure.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

/// Parses `args`, runs the command, prints its JSON result to stdout.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            if !out.is_empty() {
                // a closed pipe on stdout is not a failure of the command
                let _ = writeln!(std::io::stdout(), "{out}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}
