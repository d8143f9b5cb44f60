mod cmd;
mod config;
mod draw;
mod error;
mod log;

use clap::{Args, Parser, Subcommand};
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "softbubble", version, about = "Soft-bubble gripper perception: simulation, pose estimation, shear tracking")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. They override config-file keys.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key=value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Contact threshold in meters (estimate) or release threshold in pixels
    /// of summed flow per patch pixel (shear-demo).
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long = "offset-max-deg", global = true)]
    pub offset_max_deg: Option<f64>,
    /// Depth noise standard deviation, meters.
    #[arg(long = "noise-sigma", global = true)]
    pub noise_sigma: Option<f64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Do not echo log lines to stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a grasp scene to depth, IR and point-cloud files.
    Simulate,
    /// Estimate the in-hand object pose from a pair of depth images.
    Estimate,
    /// Convergence-basin experiment over seeded random grasps.
    BasinBench,
    /// Track shear over an IR sequence and fire a release trigger.
    ShearDemo,
    /// Render a planar slice of a proximity field with gradient arrows.
    FieldSlice(cmd::slice::SliceArgs),
    /// Recompute basin-bench aggregates from the per-trial CSV.
    VerifyReport(cmd::verify::VerifyArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    match cli.command {
        Command::Simulate => cmd::simulate::run(c),
        Command::Estimate => cmd::estimate::run(c),
        Command::BasinBench => cmd::basin::run(c),
        Command::ShearDemo => cmd::shear::run(c),
        Command::FieldSlice(a) => cmd::slice::run(c, &a),
        Command::VerifyReport(a) => cmd::verify::run(c, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "event": "error", "kind": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
