//! Command-line front end: ingestion, configuration, orchestration and output.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;

use clap::{Parser, Subcommand};
use config::{RunArgs, RunConfig, SimArgs, SimConfig};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "drdid", version, about = "Distribution regression difference-in-differences")]
pub struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Counterfactual distributions and treatment effects for one or more outcomes.
    Fit(RunArgs),
    /// Joint counterfactual distribution and rank correlations of two outcomes.
    Fit2(RunArgs),
    /// Generate data from a known design, optionally estimating on it.
    Simulate(SimArgs),
    /// Check the data without estimating.
    Validate(RunArgs),
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => commands::fit(&RunConfig::resolve(a, false)?),
        Command::Fit2(a) => commands::fit2(&RunConfig::resolve(a, true)?),
        Command::Simulate(a) => commands::simulate(&SimConfig::resolve(a)?),
        Command::Validate(a) => {
            let cfg = RunConfig::resolve(a, false)?;
            let report = commands::validate_data(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            let bad: Vec<String> = report.iter().flat_map(|r| r.violations.iter().cloned()).collect();
            if bad.is_empty() {
                Ok(())
            } else {
                Err(CliError::Data(bad.join("; ")))
            }
        }
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.kind().to_string());
            eprint!("{e}");
            eprintln!("{}", err.record());
            return err.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}
