use std::fmt;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use tdp_core::attacks::{
    attribute_inference_protection, distinguishing_protection, singling_out_protection, AttributeConfig,
    ProjectionPrivatizer,
};
use tdp_core::calculus::{
    accuracy_feasible, ceil_snapped, max_feasible_b, q_factor, switch_to_classic, AccuracyRequirement, BaseBudget,
    TdpBudget,
};
use tdp_core::data::{clip_rows_to_unit_ball, standardize_columns, RecordMatrix};
use tdp_core::experiment::{emit_results, read_ledger, run_sweep, Case, ExperimentConfig};
use tdp_core::io::{default_headers, read_json, read_matrix_csv, read_table, write_columns_csv, write_json, write_matrix_csv};
use tdp_core::mondrian::{mondrian_anonymize, AnonymityParams};
use tdp_core::projection::{delta_convention, privatize_partitioned};
use tdp_core::synth::{
    moments_report, synth_classification_dataset, synth_loan_book, synth_regression_dataset, SynthSpec,
    DEFAULT_INTEREST_RATE,
};
use tdp_core::targeting::{
    evaluate_lending, evaluate_regression, kfold_split, relative_change, EligibilityRule, DEFAULT_LOGISTIC_LAMBDA,
    DEFAULT_POPULATION, DEFAULT_RIDGE_LAMBDA,
};
use tdp_core::{RandomSource, TdpError};

use crate::{AttackKind, BudgetArgs, CaseArg, Cli, Command};

/// Maps onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Infeasible(String),
    Runtime(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) | Failure::Infeasible(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<TdpError> for Failure {
    fn from(e: TdpError) -> Self {
        let msg = e.to_string();
        match e {
            TdpError::Io(_) => Failure::Runtime(msg),
            TdpError::Csv(ref c) if c.is_io_error() => Failure::Runtime(msg),
            TdpError::RankDeficientProjection { .. }
            | TdpError::SingularSystem
            | TdpError::NonConvergence { .. }
            | TdpError::MomentMatchFailure(_) => Failure::Runtime(msg),
            _ => Failure::Invalid(msg),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

const LOAN_STREAM: u64 = 4;

pub fn run(cli: &Cli) -> CliResult {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Synth { case, out_dir, rows } => synth(*case, out_dir, *rows, seed),
        Command::Privatize {
            input,
            output,
            budget,
            preprocess,
            rescale,
            certificate,
        } => privatize(input, output, budget, *preprocess, *rescale, certificate.as_deref(), seed),
        Command::Anonymize { k, input, output, .. } => anonymize(*k, input, output),
        Command::Evaluate {
            task,
            features,
            target,
            ledger,
            folds,
            out,
        } => evaluate(*task, features, target, ledger.as_deref(), *folds, out, seed),
        Command::Attack {
            kind,
            original,
            budget,
            runs,
            holdout,
            preprocess,
            out,
        } => attack(*kind, original, budget, *runs, *holdout, *preprocess, out, seed),
        Command::CheckParams { b, epsilon, delta, gamma } => check_params(*b, *epsilon, *delta, *gamma),
        Command::Sweep { out_dir, resume } => sweep(cli, out_dir.as_deref(), *resume),
    }
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(case: CaseArg, out_dir: &Path, rows: Option<usize>, seed: u64) -> CliResult {
    std::fs::create_dir_all(out_dir).map_err(TdpError::from)?;
    let mut spec = match case {
        CaseArg::Togo => SynthSpec::togo(),
        CaseArg::Nigeria => SynthSpec::nigeria(),
    }
    .with_seed(seed);
    spec.n = rows.unwrap_or(spec.n);
    let (x, y) = match case {
        CaseArg::Togo => synth_regression_dataset(&spec)?,
        CaseArg::Nigeria => synth_classification_dataset(&spec)?,
    };
    write_matrix_csv(&out_dir.join("X.csv"), &default_headers(x.ncols()), &x)?;
    write_columns_csv(&out_dir.join("y.csv"), &["y"], &[&y.values])?;
    if case == CaseArg::Nigeria {
        let book = synth_loan_book(spec.n, DEFAULT_INTEREST_RATE, &mut RandomSource::from_seed(seed).derive(LOAN_STREAM))?;
        write_columns_csv(
            &out_dir.join("loans.csv"),
            &["loan", "revenue", "interest"],
            &[&book.loan, &book.revenue, &book.interest],
        )?;
    }
    let report = moments_report(&spec, &y);
    write_json(&out_dir.join("moments.json"), &report)?;
    print_json(&report)
}

fn load_budget(args: &BudgetArgs) -> CliResult<BaseBudget> {
    match &args.budget {
        Some(path) => Ok(read_json(path)?),
        None => Ok(BaseBudget {
            b: args.b,
            epsilon1: args.epsilon1,
            epsilon2: args.epsilon2,
            k: args.k,
        }),
    }
}

fn load_features(path: &Path, preprocess: bool) -> CliResult<(Vec<String>, RecordMatrix)> {
    let (headers, x) = read_matrix_csv(path)?;
    if !preprocess {
        return Ok((headers, x));
    }
    let (standardized, _) = standardize_columns(&x)?;
    Ok((headers, clip_rows_to_unit_ball(&standardized)))
}

fn privatize(
    input: &Path,
    output: &Path,
    args: &BudgetArgs,
    preprocess: bool,
    rescale: bool,
    certificate: Option<&Path>,
    seed: u64,
) -> CliResult {
    let (headers, x) = load_features(input, preprocess)?;
    let base = load_budget(args)?;
    let out = privatize_partitioned(&x, &base, args.partitions, &mut RandomSource::from_seed(seed))?;
    let cert = out.certificate();
    let released = if rescale {
        RecordMatrix::new(out.x_priv.into_values() * base.k as f64)?
    } else {
        out.x_priv
    };
    write_matrix_csv(output, &headers, &released)?;
    if let Some(path) = certificate {
        write_json(path, &cert)?;
    }
    print_json(&cert)
}

fn anonymize(k: usize, input: &Path, output: &Path) -> CliResult {
    let (headers, x) = read_matrix_csv(input)?;
    let anon = mondrian_anonymize(&x, &AnonymityParams::new(k)?)?;
    write_matrix_csv(output, &headers, &anon)?;
    info!("wrote {}-anonymous release to {}", k, output.display());
    Ok(())
}

fn read_target(path: &Path) -> CliResult<Vec<f64>> {
    let table = read_table(path)?;
    table
        .columns
        .first()
        .cloned()
        .ok_or_else(|| Failure::Invalid(format!("{} has no columns", path.display())))
}

fn evaluate(
    task: CaseArg,
    features: &Path,
    target: &Path,
    ledger: Option<&Path>,
    folds: usize,
    out: &Path,
    seed: u64,
) -> CliResult {
    let (_, x) = read_matrix_csv(features)?;
    let y = read_target(target)?;
    if y.len() != x.nrows() {
        return Err(Failure::Invalid(format!(
            "features have {} rows but the target has {}",
            x.nrows(),
            y.len()
        )));
    }
    let assignment = kfold_split(x.nrows(), folds, &mut RandomSource::from_seed(seed).derive(1))?;
    let report = match task {
        CaseArg::Togo => {
            let e = evaluate_regression(
                &x,
                &y,
                &assignment,
                DEFAULT_RIDGE_LAMBDA,
                &EligibilityRule::default(),
                DEFAULT_POPULATION,
            )?;
            json!({
                "task": "togo",
                "n": x.nrows(),
                "r_squared": e.r_squared,
                "accuracy": e.exclusion.metrics.accuracy,
                "false_positive_rate": e.exclusion.metrics.false_positive_rate,
                "exclusion_errors_sample": e.exclusion.sample_count,
                "exclusion_errors_national": e.exclusion.national_estimate,
                "exclusion_errors_rate_based": e.exclusion.rate_based_count,
                "exclusion_errors_rate_based_national": e.exclusion.rate_based_national,
            })
        }
        CaseArg::Nigeria => {
            let ledger = match ledger {
                Some(path) => read_ledger(path)?,
                None => {
                    warn!("no ledger given; using a synthetic loan book");
                    synth_loan_book(x.nrows(), DEFAULT_INTEREST_RATE, &mut RandomSource::from_seed(seed).derive(LOAN_STREAM))?
                        .ledger()
                }
            };
            let e = evaluate_lending(&x, &y, &ledger, &assignment, DEFAULT_LOGISTIC_LAMBDA, 0.5)?;
            json!({
                "task": "nigeria",
                "n": x.nrows(),
                "accuracy": e.metrics.accuracy,
                "false_positive_rate": e.metrics.false_positive_rate,
                "profit": e.profit,
                "perfect_profit": e.perfect_profit,
                "relative_change_vs_perfect": relative_change(e.profit, e.perfect_profit).ok(),
            })
        }
    };
    write_json(out, &report)?;
    print_json(&report)
}

#[allow(clippy::too_many_arguments)]
fn attack(
    kind: AttackKind,
    original: &Path,
    args: &BudgetArgs,
    runs: usize,
    holdout: usize,
    preprocess: bool,
    out: &Path,
    seed: u64,
) -> CliResult {
    let (_, x) = load_features(original, preprocess)?;
    let base = load_budget(args)?;
    let privatizer = ProjectionPrivatizer {
        base,
        partitions: args.partitions,
    };
    let rng = RandomSource::from_seed(seed);
    let report = match kind {
        AttackKind::SinglingOut => serde_json::to_value(singling_out_protection(&x, &privatizer, runs, &rng)?)?,
        AttackKind::Attribute => {
            let cfg = AttributeConfig { holdout, repeats: runs };
            serde_json::to_value(attribute_inference_protection(&x, &privatizer, &cfg, &rng)?)?
        }
        AttackKind::Distinguishing => {
            let delta = delta_convention(x.nrows(), args.partitions)?.delta;
            serde_json::to_value(distinguishing_protection(&base.with_delta(delta)?)?)?
        }
    };
    write_json(out, &report)?;
    print_json(&report)
}

fn check_params(b: f64, epsilon: f64, delta: f64, gamma: f64) -> CliResult {
    let budget = TdpBudget::new(b, epsilon, delta)?;
    let req = AccuracyRequirement::new(gamma)?;
    let q = q_factor(&budget, &req);
    let feasible = accuracy_feasible(&budget, &req);
    let report = json!({
        "B": b,
        "epsilon": epsilon,
        "delta": delta,
        "gamma": gamma,
        "q": q,
        "steps_available": ceil_snapped(2.0 / b),
        "steps_required": ceil_snapped(q.ln() / epsilon),
        "feasible": feasible,
        "max_feasible_B": max_feasible_b(epsilon, delta, gamma),
        "classic_equivalent": switch_to_classic(&budget, 2.0)?,
    });
    print_json(&report)?;
    if feasible {
        Ok(())
    } else {
        Err(Failure::Infeasible(format!(
            "B = {b} is too large for {gamma}-accurate targeting at epsilon = {epsilon}, delta = {delta}"
        )))
    }
}

fn sweep(cli: &Cli, out_dir: Option<&Path>, resume: bool) -> CliResult {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => {
            warn!("no --config given; running the default grid on synthetic data");
            ExperimentConfig::for_case(Case::Togo)
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = out_dir {
        config.output_dir = dir.to_path_buf();
    }
    config.resume |= resume;
    let dir = config.output_dir.clone();
    let result = run_sweep(&config, Some(&dir))?;
    emit_results(&result, &dir)?;
    for p in result.points() {
        println!(
            "{:<40} {}={} singling_out={} attribute={} distinguishing={}",
            p.label,
            p.metric_name,
            fmt_opt(p.metric_mean),
            fmt_opt(p.singling_out),
            fmt_opt(p.attribute_inference),
            fmt_opt(p.distinguishing)
        );
    }
    info!("results written to {}", dir.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}
