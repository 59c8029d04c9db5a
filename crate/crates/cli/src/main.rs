use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use electrodiff::orchestrator::{self, load_config, RunOptions};
use electrodiff::verification::{mms_convergence, run_suite};
use electrodiff::Error;

/// Structure-preserving electrodiffusion simulator.
#[derive(Parser)]
#[command(name = "electrodiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a configuration file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.directory`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop at the first step boundary at or after this time.
        #[arg(long)]
        until: Option<f64>,
    },
    /// Continue a run from a checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        until: Option<f64>,
    },
    /// Show or run a library scenario.
    Scenario {
        #[arg(long)]
        name: String,
        /// Print the configuration instead of running it.
        #[arg(long)]
        print_config: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite.
    Verify {
        #[arg(long)]
        suite: String,
        /// Print the machine-readable report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Run a manufactured-solution convergence study.
    Convergence {
        #[arg(long)]
        case: String,
        #[arg(long)]
        json: bool,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error [{}]: {e}", e.module());
    ExitCode::from(e.exit_code() as u8)
}

fn report(summary: orchestrator::RunSummary) -> ExitCode {
    match serde_json::to_string_pretty(&summary) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("{e}"),
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, until } => load_config(&config)
            .and_then(|c| orchestrator::run(c, &RunOptions { out_dir: out, until }))
            .map(report),
        Command::Resume { checkpoint, out, until } => {
            orchestrator::resume(&checkpoint, &RunOptions { out_dir: out, until }).map(report)
        }
        Command::Scenario { name, print_config, out } => orchestrator::scenario(&name).and_then(|c| {
            if print_config {
                print!("{}", c.to_toml_string());
                Ok(ExitCode::SUCCESS)
            } else {
                orchestrator::run(c, &RunOptions { out_dir: out, until: None }).map(report)
            }
        }),
        Command::Verify { suite, json } => run_suite(&suite).map(|r| {
            if json {
                println!("{}", serde_json::to_string_pretty(&r).unwrap_or_default());
            } else {
                print!("{}", r.text());
            }
            if r.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }),
        Command::Convergence { case, json } => mms_convergence(&case).map(|reports| {
            for r in &reports {
                if json {
                    println!("{}", serde_json::to_string(r).unwrap_or_default());
                } else {
                    print!("{}", r.table());
                }
            }
            if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }),
    };
    result.unwrap_or_else(|e| fail(&e))
}
