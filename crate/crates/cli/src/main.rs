#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod codec;
mod experiment;
mod project;
mod replay;
mod serve;

/// Predictive display for vehicle teleoperation.
#[derive(Debug, Parser)]
#[command(name = "pdisplay", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for synthetic scenes and random delays.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

impl Common {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Depth codec curve, quantization steps and stream bandwidth.
    CodecReport(codec::CodecArgs),
    /// Warp one RGB + depth frame to a new camera pose.
    Project(project::ProjectArgs),
    /// Run a closed-loop experiment from a config file.
    Experiment(experiment::ExperimentArgs),
    /// Replay a delay trace through hold-and-apply.
    Replay(replay::ReplayArgs),
    /// Run the simulation live for the operator console.
    Serve(serve::ServeArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("PP_LOG", "info"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::CodecReport(a) => codec::run(&cli.common, &a),
        Command::Project(a) => project::run(&cli.common, &a),
        Command::Experiment(a) => experiment::run(&cli.common, &a),
        Command::Replay(a) => replay::run(&cli.common, &a),
        Command::Serve(a) => serve::run(&cli.common, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
