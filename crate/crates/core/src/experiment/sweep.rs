use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Case, ExperimentConfig};
use crate::attacks::{
    attribute_inference_protection, baseline_singling_out, distinguishing_protection, non_private_distinguishing,
    singling_out_scores, AttributeConfig, IdentityPrivatizer, ProjectionPrivatizer, SinglingOutReport,
};
use crate::calculus::{switch_to_classic, BaseBudget};
use crate::data::{preprocess, RecordMatrix, TargetKind};
use crate::error::{Result, TdpError};
use crate::io::{read_json, read_matrix_csv, read_table, write_atomic};
use crate::mondrian::{mondrian_anonymize, AnonymityParams};
use crate::projection::{delta_convention, privatize_partitioned};
use crate::rng::RandomSource;
use crate::synth::{synth_classification_dataset, synth_loan_book, synth_regression_dataset, SynthSpec};
use crate::targeting::{
    evaluate_lending, evaluate_regression, kfold_split, relative_change, EligibilityRule, FoldAssignment,
    ProfitLedger,
};

const FOLD_STREAM: u64 = 1;
const CELL_STREAM: u64 = 2;
const BASELINE_STREAM: u64 = 3;
const LOAN_STREAM: u64 = 4;

/// Preprocessed features, target and the fold assignment shared by every
/// cell of a sweep.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub case: Case,
    pub x: RecordMatrix,
    pub y: Vec<f64>,
    pub ledger: Option<ProfitLedger>,
    pub folds: FoldAssignment,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub d: usize,
    pub source: String,
}

/// Raw features, target and (lending case) ledger, from files or generated.
pub fn load_dataset(config: &ExperimentConfig) -> Result<(RecordMatrix, Vec<f64>, Option<ProfitLedger>, String)> {
    let src = &config.data;
    let root = RandomSource::from_seed(config.seed);
    if let Some(features) = &src.features {
        let (_, x) = read_matrix_csv(features)?;
        let target = src
            .target
            .as_ref()
            .ok_or_else(|| TdpError::invalid("a features file needs a matching target file"))?;
        let table = read_table(target)?;
        let y = table
            .columns
            .first()
            .ok_or_else(|| TdpError::Parse("target file has no columns".into()))?
            .clone();
        let ledger = match (config.case, &src.ledger) {
            (Case::Togo, _) => None,
            (Case::Nigeria, Some(path)) => Some(read_ledger(path)?),
            (Case::Nigeria, None) => {
                Some(synth_loan_book(x.nrows(), config.interest_rate, &mut root.derive(LOAN_STREAM))?.ledger())
            }
        };
        return Ok((x, y, ledger, features.display().to_string()));
    }
    match config.case {
        Case::Togo => {
            let mut spec = SynthSpec::togo().with_seed(config.seed);
            spec.n = src.synthetic_rows.unwrap_or(spec.n);
            let (x, y) = synth_regression_dataset(&spec)?;
            Ok((x, y.values, None, "synthetic:togo".into()))
        }
        Case::Nigeria => {
            let mut spec = SynthSpec::nigeria().with_seed(config.seed);
            spec.n = src.synthetic_rows.unwrap_or(spec.n);
            let (x, y) = synth_classification_dataset(&spec)?;
            let book = synth_loan_book(spec.n, config.interest_rate, &mut root.derive(LOAN_STREAM))?;
            Ok((x, y.values, Some(book.ledger()), "synthetic:nigeria".into()))
        }
    }
}

pub fn read_ledger(path: &Path) -> Result<ProfitLedger> {
    let table = read_table(path)?;
    let ledger = ProfitLedger {
        loan: table.column("loan")?.to_vec(),
        revenue: table.column("revenue")?.to_vec(),
        interest: table.column("interest")?.to_vec(),
    };
    ledger.validate()?;
    Ok(ledger)
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let (raw, y, ledger, source) = load_dataset(config)?;
    let kind = match config.case {
        Case::Togo => TargetKind::Regression,
        Case::Nigeria => TargetKind::Binary,
    };
    let (x, target, _) = preprocess(&raw, Some((&y, kind)))?;
    let folds = kfold_split(x.nrows(), config.folds, &mut RandomSource::from_seed(config.seed).derive(FOLD_STREAM))?;
    Ok(PreparedData {
        case: config.case,
        x,
        y: target.expect("target supplied").values,
        ledger,
        folds,
        source,
    })
}

/// One evaluation of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effectiveness {
    /// National exclusion errors (targeting) or total profit (lending).
    pub metric: f64,
    pub accuracy: f64,
    pub false_positive_rate: f64,
}

pub fn evaluate_features(data: &PreparedData, config: &ExperimentConfig, x: &RecordMatrix) -> Result<Effectiveness> {
    match data.case {
        Case::Togo => {
            let rule = EligibilityRule::PercentileBelow {
                percentile: config.percentile,
            };
            let e = evaluate_regression(x, &data.y, &data.folds, config.ridge_lambda, &rule, config.population)?;
            Ok(Effectiveness {
                metric: e.exclusion.national_estimate,
                accuracy: e.exclusion.metrics.accuracy,
                false_positive_rate: e.exclusion.metrics.false_positive_rate,
            })
        }
        Case::Nigeria => {
            let ledger = data.ledger.as_ref().ok_or_else(|| TdpError::invalid("lending case needs a ledger"))?;
            let e = evaluate_lending(
                x,
                &data.y,
                ledger,
                &data.folds,
                config.logistic_lambda,
                config.approval_threshold,
            )?;
            Ok(Effectiveness {
                metric: e.profit,
                accuracy: e.metrics.accuracy,
                false_positive_rate: e.metrics.false_positive_rate,
            })
        }
    }
}

pub fn metric_name(case: Case) -> &'static str {
    match case {
        Case::Togo => "national_exclusion_errors",
        Case::Nigeria => "profit",
    }
}

/// One row of the tradeoff table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub label: String,
    pub metric_name: String,
    #[serde(rename = "B")]
    pub b: Option<f64>,
    pub epsilon1: Option<f64>,
    pub epsilon2: Option<f64>,
    pub k: Option<usize>,
    pub delta: Option<f64>,
    pub total_epsilon: Option<f64>,
    pub total_delta: Option<f64>,
    pub classic_s: Option<u64>,
    pub classic_epsilon: Option<f64>,
    pub classic_delta: Option<f64>,
    pub partitions: Option<usize>,
    pub mondrian_k: Option<usize>,
    pub repetitions: usize,
    pub failures: usize,
    pub metric_mean: Option<f64>,
    pub metric_std: Option<f64>,
    /// Percentage reduction relative to the original data.
    pub relative_change: Option<f64>,
    pub accuracy_mean: Option<f64>,
    pub fpr_mean: Option<f64>,
    pub singling_out: Option<f64>,
    pub attribute_inference: Option<f64>,
    pub distinguishing: Option<f64>,
}

impl TradeoffPoint {
    fn empty(label: String, case: Case) -> Self {
        TradeoffPoint {
            label,
            metric_name: metric_name(case).into(),
            b: None,
            epsilon1: None,
            epsilon2: None,
            k: None,
            delta: None,
            total_epsilon: None,
            total_delta: None,
            classic_s: None,
            classic_epsilon: None,
            classic_delta: None,
            partitions: None,
            mondrian_k: None,
            repetitions: 0,
            failures: 0,
            metric_mean: None,
            metric_std: None,
            relative_change: None,
            accuracy_mean: None,
            fpr_mean: None,
            singling_out: None,
            attribute_inference: None,
            distinguishing: None,
        }
    }
}

/// Outcome of one repetition of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub cell: String,
    pub repetition: usize,
    pub effectiveness: Option<Effectiveness>,
    /// Per-scale singling-out protection of this release.
    pub singling_out: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub point: TradeoffPoint,
    pub raw: Vec<RawRecord>,
    /// Full attack reports, when run.
    pub singling_out_report: Option<SinglingOutReport>,
    pub attribute_report: Option<crate::attacks::AttributeInferenceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub version: String,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn points(&self) -> Vec<TradeoffPoint> {
        self.cells.iter().map(|c| c.point.clone()).collect()
    }
}

pub fn cell_id(base: &BaseBudget) -> String {
    format!("tdp:B={}:eps1={}:eps2={}:k={}", base.b, base.epsilon1, base.epsilon2, base.k)
}

fn cell_stream(root: &RandomSource, base: &BaseBudget) -> RandomSource {
    root.derive(CELL_STREAM)
        .derive2(base.b.to_bits(), base.epsilon1.to_bits())
        .derive2(base.epsilon2.to_bits(), base.k as u64)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}

fn summarize(point: &mut TradeoffPoint, raw: &[RawRecord], original_metric: Option<f64>) {
    let ok: Vec<Effectiveness> = raw.iter().filter_map(|r| r.effectiveness).collect();
    point.repetitions = raw.len();
    point.failures = raw.len() - ok.len();
    let metrics: Vec<f64> = ok.iter().map(|e| e.metric).collect();
    (point.metric_mean, point.metric_std) = mean_std(&metrics);
    point.accuracy_mean = mean_std(&ok.iter().map(|e| e.accuracy).collect::<Vec<_>>()).0;
    point.fpr_mean = mean_std(&ok.iter().map(|e| e.false_positive_rate).collect::<Vec<_>>()).0;
    point.relative_change = match (point.metric_mean, original_metric) {
        (Some(m), Some(o)) => relative_change(m, o).ok(),
        _ => None,
    };
}

/// Evaluates one budget cell: `repetitions` privatizations, each evaluated
/// on the shared folds and (optionally) attacked, plus attribute inference
/// and the analytic distinguishing score.
pub fn run_single(
    data: &PreparedData,
    config: &ExperimentConfig,
    base: &BaseBudget,
    original_metric: Option<f64>,
) -> Result<CellResult> {
    let partitions = config.partition_count();
    let convention = delta_convention(data.x.nrows(), partitions)?;
    let budget = base.with_delta(convention.delta)?;
    let total = budget.total();
    let classic = switch_to_classic(&total, 2.0)?;
    let id = cell_id(base);
    let stream = cell_stream(&RandomSource::from_seed(config.seed), base);

    let reps: Vec<(RawRecord, Option<(Vec<f64>, Vec<f64>)>)> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let attempt = || -> Result<(Effectiveness, Option<(Vec<f64>, Vec<f64>)>)> {
                let out = privatize_partitioned(&data.x, base, partitions, &mut stream.derive2(0, rep as u64))?;
                let eff = evaluate_features(data, config, &out.x_priv)?;
                let scores = if config.attacks.singling_out {
                    let release = RecordMatrix::new(out.x_priv.into_values() * base.k as f64)?;
                    Some(singling_out_scores(&data.x, &release)?)
                } else {
                    None
                };
                Ok((eff, scores))
            };
            match attempt() {
                Ok((eff, scores)) => (
                    RawRecord {
                        cell: id.clone(),
                        repetition: rep,
                        effectiveness: Some(eff),
                        singling_out: scores.as_ref().map(|s| s.0.clone()),
                        error: None,
                    },
                    scores,
                ),
                Err(e) => (
                    RawRecord {
                        cell: id.clone(),
                        repetition: rep,
                        effectiveness: None,
                        singling_out: None,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let (raw, scores): (Vec<RawRecord>, Vec<_>) = reps.into_iter().unzip();
    for r in raw.iter().filter(|r| r.error.is_some()) {
        warn!("{} repetition {} failed: {}", r.cell, r.repetition, r.error.as_deref().unwrap_or(""));
    }

    let mut point = TradeoffPoint::empty(id, data.case);
    point.b = Some(base.b);
    point.epsilon1 = Some(base.epsilon1);
    point.epsilon2 = Some(base.epsilon2);
    point.k = Some(base.k);
    point.delta = Some(convention.delta);
    point.total_epsilon = Some(total.epsilon);
    point.total_delta = Some(total.delta);
    point.classic_s = Some(classic.s);
    point.classic_epsilon = Some(classic.epsilon_hat);
    point.classic_delta = Some(classic.delta_hat);
    point.partitions = Some(partitions);
    summarize(&mut point, &raw, original_metric);

    let runs: Vec<(Vec<f64>, Vec<f64>)> = scores.into_iter().flatten().collect();
    let singling_out_report = if runs.is_empty() {
        None
    } else {
        Some(SinglingOutReport::from_runs(&data.x, &runs)?)
    };
    point.singling_out = singling_out_report.as_ref().map(|r| r.worst_case_protection);

    let attribute_report = if config.attacks.attribute_inference {
        let privatizer = ProjectionPrivatizer {
            base: *base,
            partitions,
        };
        let cfg = AttributeConfig {
            holdout: config.attacks.holdout,
            repeats: config.attacks.attribute_repeats.unwrap_or(config.repetitions),
        };
        Some(attribute_inference_protection(&data.x, &privatizer, &cfg, &stream.derive(1))?)
    } else {
        None
    };
    point.attribute_inference = attribute_report.as_ref().map(|r| r.protection);
    point.distinguishing = Some(distinguishing_protection(&budget)?.d_score);
    Ok(CellResult {
        point,
        raw,
        singling_out_report,
        attribute_report,
    })
}

fn run_original(data: &PreparedData, config: &ExperimentConfig) -> Result<CellResult> {
    let id = "original".to_string();
    let eff = evaluate_features(data, config, &data.x)?;
    let raw = vec![RawRecord {
        cell: id.clone(),
        repetition: 0,
        effectiveness: Some(eff),
        singling_out: None,
        error: None,
    }];
    let mut point = TradeoffPoint::empty(id, data.case);
    summarize(&mut point, &raw, Some(eff.metric));
    if config.attacks.singling_out {
        point.singling_out = Some(baseline_singling_out(&data.x));
    }
    let attribute_report = if config.attacks.attribute_inference {
        let cfg = AttributeConfig {
            holdout: config.attacks.holdout,
            repeats: config.attacks.attribute_repeats.unwrap_or(config.repetitions),
        };
        let stream = RandomSource::from_seed(config.seed).derive(BASELINE_STREAM);
        Some(attribute_inference_protection(&data.x, &IdentityPrivatizer, &cfg, &stream)?)
    } else {
        None
    };
    point.attribute_inference = attribute_report.as_ref().map(|r| r.protection);
    point.distinguishing = Some(non_private_distinguishing());
    Ok(CellResult {
        point,
        raw,
        singling_out_report: None,
        attribute_report,
    })
}

fn run_mondrian(data: &PreparedData, config: &ExperimentConfig, k: usize, original: f64) -> Result<CellResult> {
    let id = format!("mondrian:k={k}");
    let eff = AnonymityParams::new(k)
        .and_then(|p| mondrian_anonymize(&data.x, &p))
        .and_then(|anon| evaluate_features(data, config, &anon));
    let raw = vec![RawRecord {
        cell: id.clone(),
        repetition: 0,
        effectiveness: eff.as_ref().ok().copied(),
        singling_out: None,
        error: eff.as_ref().err().map(ToString::to_string),
    }];
    let mut point = TradeoffPoint::empty(id, data.case);
    point.mondrian_k = Some(k);
    summarize(&mut point, &raw, Some(original));
    Ok(CellResult {
        point,
        raw,
        singling_out_report: None,
        attribute_report: None,
    })
}

/// Progress record in the output directory; lets an interrupted sweep skip
/// finished cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Option<ExperimentConfig>,
    pub cells: BTreeMap<String, CellResult>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn comparable(config: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        resume: false,
        ..config.clone()
    }
}

/// Runs the original and Mondrian baselines once, then every grid cell.
/// With `manifest_dir`, each finished cell is recorded there atomically and,
/// when `config.resume` is set, cells already recorded are reused.
pub fn run_sweep(config: &ExperimentConfig, manifest_dir: Option<&Path>) -> Result<SweepResult> {
    let data = prepare_data(config)?;
    config.validate(data.x.nrows())?;
    if let Some(msg) = config.low_repetition_warning() {
        warn!("{msg}");
    }

    let manifest_path = manifest_dir.map(|d| d.join(MANIFEST_FILE));
    let mut manifest = Manifest {
        config: Some(comparable(config)),
        cells: BTreeMap::new(),
    };
    if let (true, Some(path)) = (config.resume, &manifest_path) {
        if path.exists() {
            let previous: Manifest = read_json(path)?;
            if previous.config == manifest.config {
                info!("resuming with {} finished cells", previous.cells.len());
                manifest.cells = previous.cells;
            } else {
                warn!("manifest belongs to a different configuration; starting over");
            }
        }
    }
    if let Some(dir) = manifest_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut order = vec!["original".to_string()];
    order.extend(config.mondrian_k.iter().map(|k| format!("mondrian:k={k}")));
    let budgets = config.grid.budgets();
    order.extend(budgets.iter().map(cell_id));

    let mut original_metric = None;
    for (pos, id) in order.iter().enumerate() {
        if let Some(done) = manifest.cells.get(id) {
            if pos == 0 {
                original_metric = done.point.metric_mean;
            }
            continue;
        }
        info!("cell {}/{}: {id}", pos + 1, order.len());
        let result = if pos == 0 {
            let r = run_original(&data, config)?;
            original_metric = r.point.metric_mean;
            r
        } else if pos <= config.mondrian_k.len() {
            let original = original_metric.ok_or_else(|| TdpError::invalid("original evaluation missing"))?;
            run_mondrian(&data, config, config.mondrian_k[pos - 1], original)?
        } else {
            run_single(&data, config, &budgets[pos - 1 - config.mondrian_k.len()], original_metric)?
        };
        manifest.cells.insert(id.clone(), result);
        if let Some(path) = &manifest_path {
            write_atomic(path, &serde_json::to_vec(&manifest)?)?;
        }
    }

    let cells = order
        .iter()
        .map(|id| manifest.cells.remove(id).expect("every cell computed"))
        .collect();
    Ok(SweepResult {
        config: config.clone(),
        data: DataSummary {
            n: data.x.nrows(),
            d: data.x.ncols(),
            source: data.source.clone(),
        },
        version: env!("CARGO_PKG_VERSION").to_string(),
        cells,
    })
}
