//! `gitstab`: classify, balance and probe atomic measures on RP^n.
//!
//! Every command writes one JSON report to stdout and signals its result
//! through the exit code.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::FalseyValueParser;
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{BalanceArgs, ClassifyArgs, ValidateArgs, WeightArgs};

#[derive(Parser)]
#[command(name = "gitstab", version, about = "Stability of atomic measures on real projective space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide stable / polystable / semistable / unstable.
    /// Exit 0, 1, 2, 3 respectively.
    Classify {
        file: PathBuf,
        /// Read every number as an exact rational.
        #[arg(long, env = "GITSTAB_EXACT", value_parser = FalseyValueParser::new())]
        exact: bool,
        /// Float tolerance for mass = dim/(n+1).
        #[arg(long)]
        tol: Option<f64>,
        /// Random directions for the cross-check; also enables sampled
        /// classification above the enumeration limit.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Find g balancing the measure. Exit 0 converged, 4 diverged, 5 out of iterations.
    Balance {
        file: PathBuf,
        #[arg(long, env = "GITSTAB_EXACT", value_parser = FalseyValueParser::new())]
        exact: bool,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iter: usize,
        /// Write one JSON line per iteration to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Maximal weight along a direction given as a matrix file or `flat:i,j,...`.
    Weight {
        file: PathBuf,
        #[arg(long, env = "GITSTAB_EXACT", value_parser = FalseyValueParser::new())]
        exact: bool,
        #[arg(long)]
        xi: String,
    },
    /// Check the Kempf-Ness axioms on random instances. Exit 14 on failure.
    Validate {
        file: PathBuf,
        #[arg(long, env = "GITSTAB_EXACT", value_parser = FalseyValueParser::new())]
        exact: bool,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        break_cocycle: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, outcome) = match &cli.command {
        Command::Classify { file, exact, tol, samples, seed } => {
            ("classify", commands::classify(ClassifyArgs { file, exact: *exact, tol: *tol, samples: *samples, seed: *seed }))
        }
        Command::Balance { file, exact, tol, max_iter, trace } => (
            "balance",
            commands::balance(BalanceArgs { file, exact: *exact, tol: *tol, max_iter: *max_iter, trace: trace.as_deref() }),
        ),
        Command::Weight { file, exact, xi } => ("weight", commands::weight(WeightArgs { file, exact: *exact, xi })),
        Command::Validate { file, exact, samples, seed, break_cocycle } => (
            "validate",
            commands::validate(ValidateArgs { file, exact: *exact, samples: *samples, seed: *seed, break_cocycle: *break_cocycle }),
        ),
    };
    match outcome {
        Ok((report, code)) => {
            println!("{}", report::canonical(&report.to_value()));
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            let out = json!({"command": name, "error": e.message, "exit_code": e.code, "version": env!("CARGO_PKG_VERSION")});
            println!("{}", report::canonical(&out));
            ExitCode::from(e.code as u8)
        }
    }
}
