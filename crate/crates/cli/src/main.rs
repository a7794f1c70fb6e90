mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hgmt", version, about = "Flatness, cubes, coronas and bilipschitz pieces of point clouds in the Heisenberg group")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; defaults apply to absent keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Comma-separated coordinates `x1,...,x2n+1`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub center: Option<String>,
    #[arg(long, global = true)]
    pub radius: Option<f64>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic cloud (JSON, or CSV by extension).
    Gen,
    /// Build dyadic cubes and audit their axioms.
    Cubes,
    /// β₁ spectrum over sampled centers and scales (CSV).
    Beta,
    /// Normalized Carleson sum on a ball.
    Carleson,
    /// Good cubes and stopping-time regions.
    Corona,
    /// Lipschitz graph model of one region, sampled to CSV.
    Graphify {
        /// Region id; the heaviest region when absent.
        #[arg(long)]
        region: Option<usize>,
    },
    /// Bilipschitz parametrization of a big piece of a ball.
    Param,
    /// Every audit in one report.
    Audit,
}

fn threads(cfg: &Config) -> Result<Option<usize>, CliError> {
    match std::env::var("HGMT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(CliError::Config(format!("HGMT_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(cfg.thread_count),
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = threads(&cfg)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    commands::dispatch(cli, &cfg)
}

fn emit_error(e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    eprintln!("{}", serde_json::json!({ "error": e.code(), "message": e.to_string() }));
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return emit_error(&CliError::Usage(e.kind().to_string()));
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => emit_error(&e),
    }
}
