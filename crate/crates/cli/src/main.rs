//! `dsrefine`: corpus simulation, training, evaluation, gradient checks and
//! spectrogram export for mask-based enhancement with a refine network.

mod cmd;
mod common;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use dsrefine::Execution;
use serde::Serialize;

use cmd::{eval, gradcheck, simulate, spectrogram, sweep, synth, train};
use common::UsageError;

#[derive(Parser, Debug, Serialize)]
#[command(name = "dsrefine", version, about)]
struct Cli {
    /// TOML file of flag defaults: top-level keys for global flags, a
    /// `[<subcommand>]` table for the rest. Explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads for data-parallel stages
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every data-parallel stage on the calling thread
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    #[serde(flatten)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Mix clean speech with noise at controlled SNRs and write a manifest
    Simulate(simulate::SimulateArgs),
    /// Write synthetic speech-like and noise WAV pools
    Synth(synth::SynthArgs),
    /// Train the front end, the refine network, or both
    Train(train::TrainArgs),
    /// Score a corpus and write per-utterance and per-SNR reports
    Eval(eval::EvalArgs),
    /// Export a grayscale spectrogram image
    Spectrogram(spectrogram::SpectrogramArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(gradcheck::GradcheckArgs),
    /// Train once per enhancement-loss weight and tabulate the results
    Sweep(sweep::SweepArgs),
}

fn command() -> clap::Command {
    Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true))
}

fn parse() -> Result<Cli> {
    let names: Vec<String> = command().get_subcommands().map(|s| s.get_name().to_string()).collect();
    let argv = config::expand(std::env::args_os().collect(), &names).map_err(|e| UsageError(format!("{e:#}")))?;
    let matches = command().try_get_matches_from(argv).unwrap_or_else(|e| e.exit());
    Ok(Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit()))
}

fn run(cli: &Cli) -> Result<()> {
    log::info!("resolved config:\n{}", toml::to_string(cli).context("serialising config")?);
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Simulate(a) => simulate::run(a, exec),
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a, exec),
        Command::Eval(a) => eval::run(a, exec),
        Command::Spectrogram(a) => spectrogram::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Sweep(a) => sweep::run(a, exec),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let result = parse().and_then(|cli| run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
