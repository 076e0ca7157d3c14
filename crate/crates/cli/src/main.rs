//! `odl`: generate synthetic data, train estimators, estimate fields from
//! measurements and run benchmark sweeps, all reproducibly from seeds.
//!
//! Exit codes: 0 success, 2 input/format error, 3 numerical failure,
//! 4 config/usage error.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use odl_core::Error;

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "odl", version, about = "Dictionary learning for field estimation from sparse sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training set (Y.odl, S.odl, mean.odl, sensors.json)
    Gen {
        /// JSON run config with data/observation/noise sections and a seed
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides config output_dir)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write it as a bundle directory
    Train {
        /// pca, ksvd or gobal
        #[arg(long)]
        method: String,
        /// Field snapshot matrix (ODL1 or CSV)
        #[arg(long)]
        y: PathBuf,
        /// Measurement matrix; a column count that is a multiple of Y's is
        /// read as noisy replicas
        #[arg(long)]
        s: PathBuf,
        /// Observation operator JSON
        #[arg(long)]
        sensors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON run config with a method section; flags override its keys
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_d: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        r_max: Option<usize>,
        /// omp or sbl (gobal only)
        #[arg(long)]
        sc_mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate fields from measurements with a trained bundle
    Estimate {
        /// Bundle directory written by train
        #[arg(long)]
        model: PathBuf,
        /// Measurement matrix, one column per estimate
        #[arg(long)]
        s: PathBuf,
        /// det or map
        #[arg(long, default_value = "det")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark sweep suite and write results.csv + .dat files
    Bench {
        /// sizedico, sensors or noise
        #[arg(long)]
        suite: String,
        /// JSON sweep config (defaults used when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a results.csv written by bench
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::InvalidArgument(_) => 2,
        Error::Numerical(_)
        | Error::DegenerateTrainingSet
        | Error::DegenerateDirection
        | Error::NotObservable => 3,
        Error::Config(_) => 4,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Gen { config, out } => commands::gen::run(&config, out.as_deref()),
        Command::Train {
            method,
            y,
            s,
            sensors,
            out,
            config,
            n_d,
            k,
            iterations,
            r_max,
            sc_mode,
            seed,
        } => commands::train::run(commands::train::Args {
            method,
            y,
            s,
            sensors,
            out,
            config,
            n_d,
            k,
            iterations,
            r_max,
            sc_mode,
            seed,
        }),
        Command::Estimate { model, s, mode, out } => {
            commands::estimate::run(&model, &s, &mode, &out)
        }
        Command::Bench { suite, config, out } => {
            commands::bench::run(&suite, config.as_deref(), &out)
        }
        Command::Report { input } => commands::report::run(&input),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
