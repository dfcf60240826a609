//! Command-line front end: configuration, persistence layout and report
//! emission around `vtvl-core`.

pub mod commands;
pub mod config;
pub mod demo;
pub mod output;
pub mod store;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CliError, Outcome, RunDir};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "vtvl", version, about = "Audit TVL traces and rebuild verifiable TVL from chain data")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, env = "VTVL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory receiving the profile store and reports.
    #[arg(long, global = true, default_value = "run")]
    pub run_dir: PathBuf,
    /// Repeat for more log output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse traces into per-snapshot protocol profiles and ingest tables.
    Ingest,
    /// Classify methods, measure drift, find shared queries, fit heavy tails.
    Audit,
    /// Value every protocol over the schedule and compare with published data.
    Reconstruct,
    /// Summarise existing reports into summary.md.
    Report,
    /// Write an offline demo workspace with its own config.
    Demo {
        /// Target directory.
        dir: PathBuf,
    },
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    if let Command::Demo { dir } = &cli.command {
        demo::write_demo(dir)?;
        println!("demo workspace written; try: vtvl --config {}/config.toml ingest", dir.display());
        return Ok(Outcome::default());
    }
    let path = cli.config.as_ref().ok_or_else(|| config::ConfigError::Invalid("--config is required".into()))?;
    let config = RunConfig::load(path)?;
    let run = RunDir::new(&cli.run_dir);
    match cli.command {
        Command::Ingest => commands::cmd_ingest(&config, &run),
        Command::Audit => commands::cmd_audit(&config, &run),
        Command::Reconstruct => commands::cmd_reconstruct(&config, &run),
        Command::Report => commands::cmd_report(&config, &run),
        Command::Demo { .. } => unreachable!("handled above"),
    }
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 success, 1 usage or configuration error, 2 fatal data error, 3 done
/// with warnings.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
