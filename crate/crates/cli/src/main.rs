//! `compact`: codec benchmarks, mesh simulation and bound verification.

mod bench;
mod bounds;
mod config;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use compact_core::mesh::transport::TransportKind;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "compact", version, about = "Residual activation compression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode synthetic tensors with every configured codec and report sizes and error.
    CompressBench(Common),
    /// Run a simulated device mesh and write ledger, trajectory and summary files.
    Simulate(Common),
    /// Compare simulated errors against the closed-form steady-state bounds.
    VerifyBounds(Common),
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the mesh transport.
    #[arg(long, value_enum)]
    pub transport: Option<TransportArg>,
    /// First port for the socket transport.
    #[arg(long)]
    pub ports: Option<u16>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TransportArg {
    Inproc,
    Socket,
}

impl From<TransportArg> for TransportKind {
    fn from(t: TransportArg) -> Self {
        match t {
            TransportArg::Inproc => TransportKind::Inproc,
            TransportArg::Socket => TransportKind::Socket,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad flags or an impossible request: exit 2.
    #[error("{0}")]
    Config(String),
    /// The run itself failed: exit 1.
    #[error("{0}")]
    Run(String),
    /// Checks ran and some failed: exit 1.
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) | CliError::ChecksFailed { .. } => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COMPACT_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::CompressBench(c) => bench::run(c),
        Command::Simulate(c) => simulate::run(c),
        Command::VerifyBounds(c) => bounds::run(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("compact: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
