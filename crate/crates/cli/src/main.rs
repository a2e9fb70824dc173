//! `gpalab`: preferential attachment tree experiments.
//!
//! Exit codes: 0 success, 1 check failed or internal error, 2 invalid
//! configuration or refused request, 3 one or more replicas failed.

mod commands;
mod config;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Common, EquivalenceArgs, ProbeArgs};

#[derive(Debug, Parser)]
#[command(name = "gpalab", version, about = "Generalised preferential attachment tree lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run replicas and write records, aggregates and plot data to --out.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Partial sums of 1/f and 1/f^2 through index --last.
    CheckConditions {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 262)]
        last: u64,
    },
    /// Compare both engines with the exact enumeration oracle.
    Equivalence {
        #[command(flatten)]
        common: Common,
        /// Tree size; at most 8.
        #[arg(long, default_value_t = 4)]
        nodes: u64,
        #[arg(long, default_value_t = 0.02)]
        oracle_threshold: f64,
        #[arg(long, default_value_t = 0.03)]
        engine_threshold: f64,
    },
    /// Median doubling gaps tau_2k - tau_k of the continuous-time engine.
    ExplosionProbe {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        checkpoints: Vec<u64>,
        /// Required shrink factor between consecutive median gaps.
        #[arg(long, default_value_t = 2.0)]
        factor: f64,
    },
    /// Couple birth gaps of --spec (upper) and --lower on shared exponentials.
    CouplingCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "NAME|@tablefile")]
        lower: String,
        #[arg(long, default_value_t = 262)]
        count: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common } => commands::simulate(common),
        Command::CheckConditions { common, last } => commands::check_conditions(common, *last),
        Command::Equivalence {
            common,
            nodes,
            oracle_threshold,
            engine_threshold,
        } => commands::equivalence(
            common,
            &EquivalenceArgs {
                nodes: *nodes,
                oracle_threshold: *oracle_threshold,
                engine_threshold: *engine_threshold,
            },
        ),
        Command::ExplosionProbe {
            common,
            checkpoints,
            factor,
        } => commands::explosion_probe(
            common,
            &ProbeArgs {
                checkpoints: checkpoints.clone(),
                factor: *factor,
            },
        ),
        Command::CouplingCheck {
            common,
            lower,
            count,
        } => commands::coupling_check(common, lower, *count),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(exit) => {
            eprintln!("error: {:#}", exit.error);
            ExitCode::from(exit.code)
        }
    }
}
