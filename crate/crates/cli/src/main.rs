mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Subway train-operation lab: simulate, train and evaluate controllers.
#[derive(Debug, Parser)]
#[command(name = "sto", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a line file; prints PASS or the first violation.
    ValidateLine { path: PathBuf },
    /// Drive one run with the scripted driver or a checkpoint.
    Simulate(SimulateArgs),
    /// Train an agent.
    Train(TrainArgs),
    /// Score a trajectory CSV, or a checkpoint's greedy run.
    Evaluate(EvaluateArgs),
    /// Merge comparison rows into one sorted table.
    Compare(CompareArgs),
    /// Run a full case study (1, 2 or 3).
    Case(CaseArgs),
}

/// Inputs shared by every command that builds an environment.
#[derive(Debug, Clone, Args)]
struct Setup {
    /// Run-config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Line file; overrides the config.
    #[arg(long)]
    line: Option<PathBuf>,
    /// Train-parameter file; overrides the config (default: built-in DKZ32).
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    setup: Setup,
    /// `scripted`, or the path of a checkpoint.
    #[arg(long, default_value = "scripted")]
    agent: String,
    /// Planning trip time in seconds (default: the line's).
    #[arg(long)]
    trip_time: Option<f64>,
    /// Trajectory CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Append the report to this comparison CSV.
    #[arg(long)]
    append: Option<PathBuf>,
    /// Model name for the comparison row.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    setup: Setup,
    /// stod, ston or itor (default: the config's).
    #[arg(long)]
    algo: Option<String>,
    /// desk or paper; replaces the config's agent section with this preset.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Seed; falls back to the config, then STO_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trip_time: Option<f64>,
    /// Output directory (default: the config's, else `runs/<algo>-seed<seed>`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Record real elapsed time in the log (breaks byte-identical logs).
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    setup: Setup,
    /// Trajectory CSV to score.
    trajectory: Option<PathBuf>,
    /// Score the greedy run of this checkpoint instead.
    #[arg(long, conflicts_with = "trajectory")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    trip_time: Option<f64>,
    /// Write the checkpoint's trajectory here.
    #[arg(long, requires = "checkpoint")]
    out: Option<PathBuf>,
    #[arg(long)]
    append: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Comparison CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the merged, sorted CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CaseArgs {
    #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
    case: u8,
    #[command(flatten)]
    setup: Setup,
    /// Directory holding `lines/` (used when no line is given).
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ValidateLine { path } => commands::validate_line(&path),
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Case(a) => commands::case(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code_for(&err))
        }
    }
}
