//! Command-line harness wiring models, datasets, explainers, and metrics
//! into reproducible experiment runs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod cmd_benchmark;
mod cmd_explain;
mod cmd_validate;
mod common;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::common::CliResult;

#[derive(Parser)]
#[command(
    name = "xaikit",
    version,
    about = "Black-box explainability toolkit: saliency, Shapley values, counterfactuals, and evaluation protocols"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain one prediction
    #[command(subcommand)]
    Explain(ExplainCommand),
    /// Run an experiment protocol and write report + plot data
    #[command(subcommand)]
    Benchmark(BenchmarkCommand),
    /// Run the built-in oracle suite
    Validate(cmd_validate::ValidateArgs),
}

#[derive(Subcommand)]
enum ExplainCommand {
    /// Local saliency weights from the perturbation surrogate
    Lime(cmd_explain::LimeArgs),
    /// Kernel SHAP attributions with a pluggable background
    Shap(cmd_explain::ShapArgs),
    /// Counterfactual search towards a desired outcome
    Cf(cmd_explain::CfArgs),
}

#[derive(Subcommand)]
enum BenchmarkCommand {
    /// Impact score versus the number of removed top factors
    ImpactScoreSweep(cmd_benchmark::ImpactSweepArgs),
    /// VSI / CSI stability indices over repeated explainer runs
    Stability(cmd_benchmark::StabilityArgs),
    /// Counterfactual search success over random rejected inputs
    CfStability(cmd_benchmark::CfStabilityArgs),
    /// Proximity and sparsity of found counterfactuals
    CfQuality(cmd_benchmark::CfQualityArgs),
    /// Shapley values under the different background strategies
    ShapBackgroundCompare(cmd_benchmark::ShapCompareArgs),
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Explain(ExplainCommand::Lime(args)) => cmd_explain::run_lime(&args),
        Command::Explain(ExplainCommand::Shap(args)) => cmd_explain::run_shap(&args),
        Command::Explain(ExplainCommand::Cf(args)) => cmd_explain::run_cf(&args),
        Command::Benchmark(BenchmarkCommand::ImpactScoreSweep(args)) => {
            cmd_benchmark::run_impact_sweep(&args)
        }
        Command::Benchmark(BenchmarkCommand::Stability(args)) => {
            cmd_benchmark::run_stability(&args)
        }
        Command::Benchmark(BenchmarkCommand::CfStability(args)) => {
            cmd_benchmark::run_cf_stability(&args)
        }
        Command::Benchmark(BenchmarkCommand::CfQuality(args)) => {
            cmd_benchmark::run_cf_quality(&args)
        }
        Command::Benchmark(BenchmarkCommand::ShapBackgroundCompare(args)) => {
            cmd_benchmark::run_shap_compare(&args)
        }
        Command::Validate(args) => cmd_validate::run_validate(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
