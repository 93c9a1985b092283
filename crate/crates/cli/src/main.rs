//! `dynacal`: generate ground truth, train, verify, roll out and report.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 invariant failure,
//! 3 runtime blowup.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dynacal::dem::SceneKind;

#[derive(Debug, Parser)]
#[command(name = "dynacal", version, about = "Momentum-conserving graph-network dynamics engine")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// TOML config with optional [gen], [model], [train], [rollout] and [verify] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate ground-truth trajectories.
    Gen(GenArgs),
    /// Fit a model to a directory of trajectories.
    Train(TrainArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
    /// Roll a checkpoint forward from the start of a scene.
    Rollout(RolloutArgs),
    /// Compute system metrics of a trajectory.
    Metrics(MetricsArgs),
    /// Re-execute the command recorded in a manifest, writing to --out.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Verify(_) => "verify",
            Command::Rollout(_) => "rollout",
            Command::Metrics(_) => "metrics",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SceneArg {
    Oblique,
    Confined,
    Cylinder,
}

impl From<SceneArg> for SceneKind {
    fn from(s: SceneArg) -> Self {
        match s {
            SceneArg::Oblique => SceneKind::Oblique,
            SceneArg::Confined => SceneKind::Confined,
            SceneArg::Cylinder => SceneKind::Cylinder,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    pub scene: SceneArg,
    /// Number of trajectories, seeded `seed`, `seed + 1`, ...
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Body count (confined and cylinder scenes).
    #[arg(long)]
    pub n: Option<usize>,
    /// Recorded frames per trajectory.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Negate the drum spin profile.
    #[arg(long)]
    pub reverse_spin: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of trajectory files (`*.jsonl`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, required_unless_present = "random_params", conflicts_with = "random_params")]
    pub checkpoint: Option<PathBuf>,
    /// Use freshly drawn parameters for every graph.
    #[arg(long)]
    pub random_params: bool,
    /// Random graphs for the conservation checks.
    #[arg(long)]
    pub graphs: Option<usize>,
    /// Test hook: flip the sign of the orbital torque term.
    #[arg(long, hide = true)]
    pub corrupt_torque_sign: bool,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Trajectory supplying the walls and the two initial frames.
    #[arg(long)]
    pub scene: PathBuf,
    /// Frames to predict; defaults to the rest of the scene.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Index of the current initial frame; the one before supplies previous velocities.
    #[arg(long, default_value_t = 1)]
    pub start: usize,
    /// Ground truth to compare against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write per-edge diagnostics of every frame.
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub trajectory: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::dispatch(cli, argv) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::error_code(&e))
        }
    }
}
