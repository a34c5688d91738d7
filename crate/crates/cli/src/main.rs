//! `obscale`: fit, validate and apply observational scaling laws from the
//! command line. Without path flags every command runs on the bundled
//! model and benchmark tables; commands that fit a law also need
//! `--targets`.

mod commands;
mod config;
mod inputs;
mod output;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{PredictArgs, PreregArgs, SubsetArgs, SweepArgs};
use config::{GlobalArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "obscale", version, about = "Observational scaling laws from public benchmark results")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Impute, extract capabilities, fit the law, calibrate to reference-family FLOPs.
    Fit,
    /// Apply a fitted law file to a benchmark table.
    Predict(PredictArgs),
    /// Observational law against FLOPs and parameter-count baselines on one split.
    Compare,
    /// Fit on the train side of the cutoff split and score held-out models.
    HoldoutEval,
    /// Test MSE across a range of held-out fractions, with the area under the curve.
    Sweep(SweepArgs),
    /// V-optimal choice of model families under a model budget.
    SelectSubset(SubsetArgs),
    /// Evaluate frozen functional forms on new benchmark results.
    PreregEval(PreregArgs),
    /// Loadings, explained variance and per-family linearity of the capability space.
    PcaReport,
}

fn run(cli: &Cli) -> obscaling::Result<()> {
    let cfg = RunConfig::resolve(&cli.global).map_err(|e| e.in_stage("config"))?;
    log::debug!("{cfg:?}");
    match &cli.command {
        Command::Fit => commands::fit(&cfg),
        Command::Predict(a) => commands::predict(&cfg, a),
        Command::Compare => commands::compare(&cfg),
        Command::HoldoutEval => commands::holdout_eval(&cfg),
        Command::Sweep(a) => commands::sweep(&cfg, a),
        Command::SelectSubset(a) => commands::select_subset(&cfg, a),
        Command::PreregEval(a) => commands::prereg_eval(&cfg, a),
        Command::PcaReport => commands::pca_report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // messages already carry the stage name and the underlying cause
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
