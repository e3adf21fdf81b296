//! Command-line front end for the mixture-of-tastes ranking toolkit.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or validation
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Errors split by exit code: configuration problems exit 2, runtime
/// failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl From<mixtastes::Error> for CliError {
    fn from(e: mixtastes::Error) -> Self {
        match e {
            mixtastes::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "mixtastes",
    about = "Implicit-feedback ranking experiments with mixture-of-tastes user representations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a config file's `[hyper]` section and evaluate it.
    Fit {
        /// Experiment config (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoint.json, epochs.jsonl, eval.json
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite an existing output directory
        #[arg(long)]
        force: bool,
    },
    /// Random hyperparameter search from a config file's `[search]` section.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for trials.jsonl, curve.csv, best.json
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Concurrent trials (1 = fully deterministic record order)
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Export the unconditional running max instead of validation-gated
        #[arg(long)]
        ungated: bool,
        /// Reuse an existing output directory (search resumes from its
        /// trials.jsonl without duplicating iterations)
        #[arg(long)]
        force: bool,
    },
    /// Print dataset statistics as a single JSON line.
    Stats {
        /// Interaction log (CSV with a `user_id,item_id[,rating][,timestamp]` header)
        data: PathBuf,
        /// Iteratively prune users with fewer interactions
        #[arg(long, default_value_t = 0)]
        min_user: usize,
        /// Iteratively prune items with fewer interactions
        #[arg(long, default_value_t = 0)]
        min_item: usize,
    },
    /// Materialize a synthetic dataset to CSV.
    Synth {
        /// Descriptor, e.g. `mixture:n_users=2000,n_items=400,n_tastes=8,per_user=40`
        /// or `markov:n_users=800,n_items=240,n_tastes=8,seq_len=30`
        descriptor: String,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Re-export the best-MRR-so-far curve from a trials.jsonl file.
    ExportCurve {
        /// Records file written by `search`
        records: PathBuf,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ungated: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            config,
            out,
            seed,
            force,
        } => commands::cmd_fit(&config, &out, seed, force),
        Command::Search {
            config,
            out,
            seed,
            jobs,
            ungated,
            force,
        } => commands::cmd_search(&config, &out, seed, jobs, ungated, force),
        Command::Stats {
            data,
            min_user,
            min_item,
        } => commands::cmd_stats(&data, min_user, min_item),
        Command::Synth {
            descriptor,
            out,
            seed,
            force,
        } => commands::cmd_synth(&descriptor, &out, seed, force),
        Command::ExportCurve {
            records,
            out,
            ungated,
        } => commands::cmd_export_curve(&records, &out, ungated),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
