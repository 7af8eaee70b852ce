//! `tdp`: generate data, privatize it, audit releases and run sweeps.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "tdp", version, about = "Targeted differential privacy for tabular microdata")]
pub struct Cli {
    /// Master seed; every random stream is derived from it (default 0, or
    /// the configuration's seed for `sweep`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    Togo,
    Nigeria,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackKind {
    SinglingOut,
    Attribute,
    Distinguishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mondrian,
}

/// Budget given inline; overridden by `--budget FILE`.
#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// JSON file with `B`, `epsilon1`, `epsilon2`, `k`.
    #[arg(long)]
    pub budget: Option<PathBuf>,
    #[arg(long = "b", default_value_t = 0.25)]
    pub b: f64,
    #[arg(long, default_value_t = 3.0)]
    pub epsilon1: f64,
    #[arg(long, default_value_t = 0.9999)]
    pub epsilon2: f64,
    #[arg(long, default_value_t = 10_000)]
    pub k: usize,
    /// Row blocks privatized independently; δ follows from the block size.
    #[arg(long, default_value_t = 1)]
    pub partitions: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (X.csv, y.csv, loans.csv, moments.json).
    Synth {
        #[arg(long, value_enum)]
        case: CaseArg,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the number of rows.
        #[arg(long)]
        rows: Option<usize>,
    },
    /// Release a private version of a feature matrix.
    Privatize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Standardize columns and clip rows into the unit ball first.
        #[arg(long)]
        preprocess: bool,
        /// Multiply the release by k (the mechanism itself outputs X/k in expectation).
        #[arg(long)]
        rescale: bool,
        /// Where to write the privacy certificate (JSON).
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// k-anonymize a feature matrix.
    Anonymize {
        #[arg(long, value_enum, default_value = "mondrian")]
        method: Method,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Cross-validated targeting or lending evaluation of a feature matrix.
    Evaluate {
        #[arg(long, value_enum)]
        task: CaseArg,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Audit the private projection with one of the attacks.
    Attack {
        #[arg(long, value_enum)]
        kind: AttackKind,
        #[arg(long)]
        original: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, default_value_t = 500)]
        holdout: usize,
        #[arg(long)]
        preprocess: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check whether a budget admits γ-accurate targeting.
    CheckParams {
        #[arg(long = "b")]
        b: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
    },
    /// Run the parameter grid from `--config`.
    Sweep {
        /// Overrides the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Skip cells recorded in the output directory's manifest.
        #[arg(long)]
        resume: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(match failure {
                Failure::Invalid(_) => 2,
                Failure::Infeasible(_) => 3,
                Failure::Runtime(_) => 4,
            })
        }
    }
}
