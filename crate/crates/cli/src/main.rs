mod commands;
mod config;
mod demo;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Low-rank adapted critics: toy chain-MDP experiments and invariant suites.
#[derive(Debug, Parser)]
#[command(name = "lrcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the toy critic for every seed and write one metric CSV per run.
    ToyRun(RunArgs),
    /// Dense plus LoRA rank sweep over both regimes, with a mean/std summary.
    Sweep(RunArgs),
    /// Run a named invariant suite (or `all`).
    Check(CheckArgs),
    /// Desk-scale SimbaV2 or BroNet: forward, gradient and projection checks
    /// plus a parameter-count table.
    ArchDemo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON config, or a manifest written by an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config field; VALUE is parsed as JSON, else taken as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, default_value = "lrcl-out")]
    pub out: PathBuf,
    /// Comma-separated seed list, replacing the config's.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// projection, categorical, gradients, world, lemma1, incompatibility or all.
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Simbav2,
    Bronet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoMode {
    Dense,
    Lora,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(value_enum)]
    pub arch: Arch,
    #[arg(long, value_enum, default_value_t = DemoMode::Lora)]
    pub mode: DemoMode,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure classes, one per nonzero exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Check(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Check(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Check(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<lrcl_core::Error> for Failure {
    fn from(e: lrcl_core::Error) -> Self {
        use lrcl_core::Error as E;
        match e {
            E::InvalidArgument(_) | E::HookMismatch { .. } | E::Snapshot(_) => Failure::Usage(e.to_string()),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::ToyRun(args) => commands::toy_run(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Check(args) => commands::check(&args),
        Command::ArchDemo(args) => demo::arch_demo(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("lrcl: {f}");
            ExitCode::from(f.code())
        }
    }
}
