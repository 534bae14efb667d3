//! `rolfor`: synthetic data, training, evaluation and analysis runs for
//! role-ordered trajectory forecasting.

mod commands;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use log::error;

use commands::{AblateArgs, EvalArgs, GenArgs, PlotArgs, ProbeArgs, Session, TrainArgs, UsageError};

#[derive(Debug, Parser)]
#[command(name = "rolfor", version, about = "Role-ordered multi-agent trajectory forecasting")]
struct Cli {
    /// Directory for every output, including manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic plays as JSONL.
    Gen(GenArgs),
    /// Train a forecaster and write its checkpoint, history and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally under ordering perturbations.
    Eval(EvalArgs),
    /// Measure score-network and encoder gradient norms across soft-rank
    /// regularization strengths.
    Gradprobe(ProbeArgs),
    /// Train every adjacency variant for several seeds.
    AblateAdjacency(AblateArgs),
    /// Draw one sequence (and optionally a forecast) on the court.
    Plot(PlotArgs),
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(rolfor_core::Error::Config(_)) = cause.downcast_ref::<rolfor_core::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_RUNTIME
}

/// `ROLFOR_THREADS` caps the worker pool. Results do not depend on it.
fn configure_threads() -> Result<()> {
    let Ok(text) = std::env::var("ROLFOR_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("ROLFOR_THREADS must be a positive integer, got `{text}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(command: Command, session: &mut Session) -> Result<()> {
    configure_threads()?;
    match command {
        Command::Gen(a) => commands::cmd_gen(a, session),
        Command::Train(a) => commands::cmd_train(a, session),
        Command::Eval(a) => commands::cmd_eval(a, session),
        Command::Gradprobe(a) => commands::cmd_gradprobe(a, session),
        Command::AblateAdjacency(a) => commands::cmd_ablate_adjacency(a, session),
        Command::Plot(a) => commands::cmd_plot(a, session),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    let mut session = Session::new(cli.out_dir);
    let result = run(cli.command, &mut session);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            error!("{e:#}");
            exit_code(e)
        }
    };
    if let Some(m) = &mut session.manifest {
        if let Err(e) = m.finish(result.err().map(|e| format!("{e:#}"))) {
            error!("could not finalize the manifest: {e:#}");
        }
    }
    ExitCode::from(code)
}
