//! Downstream targeting: cross-validated ridge and logistic models,
//! percentile eligibility, exclusion errors and the lending profit model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{standardize_lenient, RecordMatrix};
use crate::error::{Result, TdpError};
use crate::rng::RandomSource;

/// Adult population used to scale sample exclusion errors: 60% of 8,243,094.
pub const DEFAULT_POPULATION: f64 = 8_243_094.0 * 0.6;
pub const DEFAULT_PERCENTILE: f64 = 0.29;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;
pub const DEFAULT_LOGISTIC_LAMBDA: f64 = 1e-3;

const LOGISTIC_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn kfold_split(n: usize, folds: usize, rng: &mut RandomSource) -> Result<FoldAssignment> {
    if folds < 2 {
        return Err(TdpError::invalid("need at least two folds"));
    }
    if n < folds {
        return Err(TdpError::TooFewRows {
            actual: n,
            required: folds,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut fold_of = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold_of[row] = pos % folds;
    }
    Ok(FoldAssignment {
        fold_of,
        folds,
        seed: rng.seed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let w = DVector::from_column_slice(&self.weights);
        (x * w).iter().map(|v| v + self.intercept).collect()
    }
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()))
}

/// Minimizes `‖y − Xw − b‖² + λ‖w‖²` (intercept unpenalized).
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    if x.nrows() != y.len() {
        return Err(TdpError::shape(x.nrows(), y.len()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(TdpError::invalid(format!("lambda = {lambda} must be >= 0")));
    }
    if x.nrows() == 0 {
        return Err(TdpError::TooFewRows { actual: 0, required: 1 });
    }
    let means = column_means(x);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let mut a = xc.tr_mul(&xc);
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let rhs = xc.tr_mul(&yc);
    let chol = a.clone().cholesky().ok_or(TdpError::SingularSystem)?;
    let scale = a.diagonal().max().max(f64::MIN_POSITIVE);
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if min_pivot <= 1e-12 * scale {
        return Err(TdpError::SingularSystem);
    }
    let w = chol.solve(&rhs);
    let residual = (&a * &w - &rhs).norm();
    if !w.iter().all(|v| v.is_finite()) || residual > 1e-6 * (1.0 + rhs.norm()) {
        return Err(TdpError::SingularSystem);
    }
    Ok(RidgeModel {
        intercept: y_mean - means.dot(&w),
        weights: w.iter().copied().collect(),
        lambda,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let w = DVector::from_column_slice(&self.weights);
        (x * w).iter().map(|z| sigmoid(z + self.intercept)).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn augmented(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(x.ncols(), 1.0)
}

/// Penalized negative log-likelihood; `theta` holds the weights followed by
/// the intercept, all penalized by `λ/2 ‖θ‖²`.
pub fn logistic_objective(x: &DMatrix<f64>, y: &[f64], theta: &[f64], lambda: f64) -> f64 {
    let a = augmented(x);
    let t = DVector::from_column_slice(theta);
    let z = a * &t;
    let nll: f64 = z.iter().zip(y).map(|(z, y)| softplus(*z) - y * z).sum();
    nll + 0.5 * lambda * t.norm_squared()
}

pub fn logistic_gradient(x: &DMatrix<f64>, y: &[f64], theta: &[f64], lambda: f64) -> Vec<f64> {
    let a = augmented(x);
    let t = DVector::from_column_slice(theta);
    let resid = DVector::from_iterator(y.len(), (&a * &t).iter().zip(y).map(|(z, y)| sigmoid(*z) - y));
    (a.tr_mul(&resid) + t * lambda).iter().copied().collect()
}

/// Damped Newton on the penalized log-likelihood.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<LogisticModel> {
    let n = x.nrows();
    if n != y.len() {
        return Err(TdpError::shape(n, y.len()));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(TdpError::invalid(format!("lambda = {lambda} must be > 0")));
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(TdpError::invalid("logistic labels must be 0 or 1"));
    }
    let a = augmented(x);
    let p = a.ncols();
    let tol = 1e-8 * n.max(1) as f64;
    let objective = |t: &DVector<f64>| -> f64 {
        let z = &a * t;
        z.iter().zip(y).map(|(z, y)| softplus(*z) - y * z).sum::<f64>() + 0.5 * lambda * t.norm_squared()
    };
    let mut theta = DVector::zeros(p);
    let mut value = objective(&theta);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..LOGISTIC_MAX_ITER {
        let z = &a * &theta;
        let probs: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
        let resid = DVector::from_iterator(n, probs.iter().zip(y).map(|(p, y)| p - y));
        let grad = a.tr_mul(&resid) + &theta * lambda;
        grad_norm = grad.norm();
        if grad_norm <= tol {
            return Ok(finish(theta, lambda, true, iter));
        }
        let mut weighted = a.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= probs[i] * (1.0 - probs[i]);
        }
        let mut hess = a.tr_mul(&weighted);
        for i in 0..p {
            hess[(i, i)] += lambda;
        }
        let step = hess.cholesky().ok_or(TdpError::SingularSystem)?.solve(&grad);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let candidate = &theta - &step * t;
            let cand_value = objective(&candidate);
            if cand_value <= value - 1e-4 * t * slope {
                theta = candidate;
                value = cand_value;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                // no further decrease available in floating point
                let g = logistic_gradient(x, y, theta.as_slice(), lambda);
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= tol {
                    return Ok(finish(theta, lambda, true, iter + 1));
                }
                return Err(TdpError::NonConvergence {
                    iterations: iter + 1,
                    gradient_norm: norm,
                });
            }
        }
    }
    Err(TdpError::NonConvergence {
        iterations: LOGISTIC_MAX_ITER,
        gradient_norm: grad_norm,
    })
}

fn finish(theta: DVector<f64>, lambda: f64, converged: bool, iterations: usize) -> LogisticModel {
    let p = theta.len();
    LogisticModel {
        weights: theta.rows(0, p - 1).iter().copied().collect(),
        intercept: theta[p - 1],
        lambda,
        converged,
        iterations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ridge,
    Logistic,
}

/// Out-of-fold predictions: row `i` is scored by the model trained on every
/// fold except its own. Logistic predictions are probabilities.
pub fn crossval_predict(
    x: &RecordMatrix,
    y: &[f64],
    folds: &FoldAssignment,
    kind: ModelKind,
    lambda: f64,
) -> Result<Vec<f64>> {
    if x.nrows() != y.len() || folds.len() != y.len() {
        return Err(TdpError::shape(x.nrows(), y.len().min(folds.len())));
    }
    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..folds.folds)
        .into_par_iter()
        .map(|f| {
            let train = folds.train_indices(f);
            let test = folds.test_indices(f);
            let xt = x.select_rows(&train)?.into_values();
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let xs = x.select_rows(&test)?.into_values();
            let pred = match kind {
                ModelKind::Ridge => fit_ridge(&xt, &yt, lambda)?.predict(&xs),
                ModelKind::Logistic => fit_logistic(&xt, &yt, lambda)?.predict_proba(&xs),
            };
            Ok((test, pred))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; y.len()];
    for (test, pred) in per_fold {
        for (i, p) in test.into_iter().zip(pred) {
            out[i] = p;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EligibilityRule {
    /// Eligible iff the prediction is strictly below the empirical quantile.
    PercentileBelow { percentile: f64 },
    /// Eligible iff the predicted probability of the positive class is at
    /// least `threshold`.
    ClassPositive { threshold: f64 },
}

impl Default for EligibilityRule {
    fn default() -> Self {
        EligibilityRule::PercentileBelow {
            percentile: DEFAULT_PERCENTILE,
        }
    }
}

/// Order statistic at rank `⌊q·n⌋ + 1` (1-based).
pub fn percentile_threshold(values: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(TdpError::invalid(format!("percentile {q} not in (0, 1)")));
    }
    if values.is_empty() {
        return Err(TdpError::TooFewRows { actual: 0, required: 1 });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64 + 1e-9).floor() as usize).min(values.len() - 1);
    Ok(sorted[rank])
}

pub fn eligibility_by_percentile(predictions: &[f64], rule: &EligibilityRule) -> Result<Vec<bool>> {
    match *rule {
        EligibilityRule::PercentileBelow { percentile } => {
            let t = percentile_threshold(predictions, percentile)?;
            Ok(predictions.iter().map(|p| *p < t).collect())
        }
        EligibilityRule::ClassPositive { threshold } => Ok(predictions.iter().map(|p| *p >= threshold).collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub false_positive_rate: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

/// Confusion counts; "positive" means flagged true.
pub fn binary_metrics(truth: &[bool], predicted: &[bool]) -> BinaryMetrics {
    let mut m = BinaryMetrics::default();
    for (t, p) in truth.iter().zip(predicted) {
        match (t, p) {
            (true, true) => m.true_positive += 1,
            (false, true) => m.false_positive += 1,
            (false, false) => m.true_negative += 1,
            (true, false) => m.false_negative += 1,
        }
    }
    let n = truth.len().min(predicted.len());
    m.accuracy = if n == 0 {
        0.0
    } else {
        (m.true_positive + m.true_negative) as f64 / n as f64
    };
    let negatives = m.false_positive + m.true_negative;
    m.false_positive_rate = if negatives == 0 {
        0.0
    } else {
        m.false_positive as f64 / negatives as f64
    };
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    /// Truly poor rows that the predictions leave out.
    pub sample_count: usize,
    pub national_estimate: f64,
    /// Same quantity reconstructed from accuracy alone: with equal-size
    /// eligible sets misses and false inclusions balance, so
    /// `misses = (1 − accuracy)·n / 2`.
    pub rate_based_count: f64,
    pub rate_based_national: f64,
    pub metrics: BinaryMetrics,
    pub n: usize,
}

pub fn exclusion_errors_scaled(
    true_y: &[f64],
    predictions: &[f64],
    rule: &EligibilityRule,
    population: f64,
) -> Result<ExclusionReport> {
    if true_y.len() != predictions.len() {
        return Err(TdpError::shape(true_y.len(), predictions.len()));
    }
    if !(population > 0.0) {
        return Err(TdpError::invalid("population must be positive"));
    }
    let EligibilityRule::PercentileBelow { .. } = rule else {
        return Err(TdpError::invalid("exclusion errors need a percentile rule"));
    };
    let truly_poor = eligibility_by_percentile(true_y, rule)?;
    let eligible = eligibility_by_percentile(predictions, rule)?;
    let metrics = binary_metrics(&truly_poor, &eligible);
    let n = true_y.len();
    let per_row = population / n as f64;
    let rate_based = (1.0 - metrics.accuracy) * n as f64 / 2.0;
    Ok(ExclusionReport {
        sample_count: metrics.false_negative,
        national_estimate: metrics.false_negative as f64 * per_row,
        rate_based_count: rate_based,
        rate_based_national: rate_based * per_row,
        metrics,
        n,
    })
}

/// Per-applicant amounts in currency units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitLedger {
    pub loan: Vec<f64>,
    pub revenue: Vec<f64>,
    pub interest: Vec<f64>,
}

impl ProfitLedger {
    pub fn len(&self) -> usize {
        self.loan.len().min(self.revenue.len()).min(self.interest.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.loan.iter().any(|l| !(*l > 0.0)) {
            return Err(TdpError::invalid("loan amounts must be positive"));
        }
        if self.revenue.iter().chain(&self.interest).any(|v| !(*v >= 0.0)) {
            return Err(TdpError::invalid("revenue and interest must be non-negative"));
        }
        Ok(())
    }

    /// Profit contribution of applicant `j`.
    pub fn outcome(&self, j: usize, low_risk: bool, approved: bool) -> Result<f64> {
        if j >= self.len() {
            return Err(TdpError::MissingLedgerEntry(j));
        }
        Ok(match (low_risk, approved) {
            (false, false) => 0.0,
            (true, true) => self.revenue[j],
            (false, true) => -(self.loan[j] + self.interest[j]),
            (true, false) => -self.revenue[j],
        })
    }
}

/// `π = Σ π_j` over the four outcomes (denied default, repaid loan,
/// approved default, denied good borrower).
pub fn lending_profit(low_risk: &[bool], approved: &[bool], ledger: &ProfitLedger) -> Result<f64> {
    if low_risk.len() != approved.len() {
        return Err(TdpError::shape(low_risk.len(), approved.len()));
    }
    low_risk
        .iter()
        .zip(approved)
        .enumerate()
        .map(|(j, (l, a))| ledger.outcome(j, *l, *a))
        .sum()
}

/// Percentage reduction of `private` relative to `original`.
pub fn relative_change(private: f64, original: f64) -> Result<f64> {
    if original == 0.0 {
        return Err(TdpError::ZeroBaseline);
    }
    Ok(100.0 * (original - private) / original.abs())
}

pub fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEvaluation {
    pub r_squared: f64,
    pub exclusion: ExclusionReport,
}

/// Consumption targeting on features `x` (re-standardized first).
pub fn evaluate_regression(
    x: &RecordMatrix,
    y: &[f64],
    folds: &FoldAssignment,
    lambda: f64,
    rule: &EligibilityRule,
    population: f64,
) -> Result<RegressionEvaluation> {
    let xs = standardize_lenient(x);
    let pred = crossval_predict(&xs, y, folds, ModelKind::Ridge, lambda)?;
    Ok(RegressionEvaluation {
        r_squared: r_squared(y, &pred),
        exclusion: exclusion_errors_scaled(y, &pred, rule, population)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LendingEvaluation {
    pub metrics: BinaryMetrics,
    pub profit: f64,
    pub perfect_profit: f64,
}

/// Loan approval on features `x` (re-standardized first). Label 1 marks a
/// low-risk applicant; approval requires predicted probability ≥ `threshold`.
pub fn evaluate_lending(
    x: &RecordMatrix,
    labels: &[f64],
    ledger: &ProfitLedger,
    folds: &FoldAssignment,
    lambda: f64,
    threshold: f64,
) -> Result<LendingEvaluation> {
    let xs = standardize_lenient(x);
    let proba = crossval_predict(&xs, labels, folds, ModelKind::Logistic, lambda)?;
    let approved = eligibility_by_percentile(&proba, &EligibilityRule::ClassPositive { threshold })?;
    let low_risk: Vec<bool> = labels.iter().map(|v| *v == 1.0).collect();
    Ok(LendingEvaluation {
        metrics: binary_metrics(&low_risk, &approved),
        profit: lending_profit(&low_risk, &approved, ledger)?,
        perfect_profit: lending_profit(&low_risk, &low_risk, ledger)?,
    })
}
