//! Command-line entry points and the HTTP service.

pub mod commands;
pub mod error;
pub mod service;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use groundloop::harness::Profile;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "groundloop", version, about = "Grounded multi-turn dialogue agent and evaluation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and print its report.
    Run(RunArgs),
    /// Run a scenario directory, optionally across the ablation matrix, and write report files.
    Bench(BenchArgs),
    /// Generate synthetic scenarios.
    Gen(GenArgs),
    /// Print a trace file.
    Replay(ReplayArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Talk to the agent about a scene from the terminal.
    Chat(ChatArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct FlagArgs {
    #[arg(long)]
    pub no_memory: bool,
    #[arg(long)]
    pub no_perception: bool,
    #[arg(long)]
    pub no_planner: bool,
    #[arg(long)]
    pub no_tools: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub scenario: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FlagArgs,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the trace (without timings) to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablate {
    /// Full agent only.
    None,
    /// Full agent plus one row per disabled module.
    All,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory of scenario files (`*.json`, or a `scenarios/` subdirectory).
    pub dir: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub ablate: Ablate,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for reports, latency tables and traces.
    #[arg(long, default_value = "bench-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// `standard` (5-7 turns) or `extended` (8-10 turns).
    #[arg(long, default_value = "standard")]
    pub profile: Profile,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub trace: PathBuf,
    /// Include phase durations when the trace has them.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario directory served under /scenarios.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Allowed browser origin; repeat for several.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
    /// Persist each session's trace here as `<session>.jsonl`.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Scene file (JSON).
    pub scene: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FlagArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Run(a) => commands::run(&a, &mut out),
        Command::Bench(a) => commands::bench(&a, &mut out),
        Command::Gen(a) => commands::gen(&a, &mut out),
        Command::Replay(a) => commands::replay(&a, &mut out),
        Command::Serve(a) => {
            drop(out);
            commands::serve(&a)
        }
        Command::Chat(a) => commands::chat(&a, std::io::stdin().lock(), &mut out),
    }
}
