//! Synthetic stand-ins for the proprietary survey datasets.
//!
//! Features are correlated Gaussians with an arbitrary mixing matrix. A
//! latent score mixes a random linear signal of the features with
//! independent noise; the regression target is an exponential tilt of that
//! score and binary labels come from a logistic model on it.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{RecordMatrix, TargetKind, TargetVector};
use crate::error::{Result, TdpError};
use crate::projection::gaussian_matrix;
use crate::rng::RandomSource;
use crate::targeting::ProfitLedger;

pub const MEAN_TOLERANCE: f64 = 0.01;
pub const STD_TOLERANCE: f64 = 0.01;
pub const SKEW_TOLERANCE: f64 = 0.5;
pub const RATE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub kind: TargetKind,
    pub target_mean: f64,
    pub target_std: f64,
    pub target_skewness: f64,
    pub target_range: (f64, f64),
    pub positive_rate: f64,
    /// Correlation between the latent score and its linear feature part.
    pub signal_strength: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// 4,201 households, 10 features, skewed consumption in `[0.005, 1]`.
    pub fn togo() -> Self {
        SynthSpec {
            n: 4201,
            d: 10,
            kind: TargetKind::Regression,
            target_mean: 0.073,
            target_std: 0.068,
            target_skewness: 4.207,
            target_range: (0.005, 1.0),
            positive_rate: 0.5,
            signal_strength: 0.7,
            seed: 0,
        }
    }

    /// 20,788 applicants, 15 features, 63.3% low-risk.
    pub fn nigeria() -> Self {
        SynthSpec {
            n: 20_788,
            d: 15,
            kind: TargetKind::Binary,
            target_mean: 0.633,
            target_std: (0.633_f64 * 0.367).sqrt(),
            target_skewness: 0.0,
            target_range: (0.0, 1.0),
            positive_rate: 0.633,
            signal_strength: 0.7,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(TdpError::invalid("n and d must be positive"));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(TdpError::invalid("signal strength must lie in [0, 1]"));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(TdpError::invalid("positive rate must lie in (0, 1)"));
        }
        if !(self.target_std > 0.0) || self.target_range.0 >= self.target_range.1 {
            return Err(TdpError::invalid("target std and range must be non-degenerate"));
        }
        Ok(())
    }
}

/// Sample moments of a target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    pub n: usize,
    pub d: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub min: f64,
    pub max: f64,
    pub positive_rate: Option<f64>,
    pub signal_strength: f64,
    pub seed: u64,
    pub feature_model: String,
}

/// Mean, population std and population skewness.
pub fn sample_moments(y: &[f64]) -> (f64, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let m2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = y.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let std = m2.sqrt();
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    (mean, std, skew)
}

pub fn moments_report(spec: &SynthSpec, y: &TargetVector) -> MomentsReport {
    let (mean, std, skewness) = sample_moments(&y.values);
    let (min, max) = crate::data::min_max(&y.values);
    MomentsReport {
        n: y.len(),
        d: spec.d,
        mean,
        std,
        skewness,
        min,
        max,
        positive_rate: (y.kind == TargetKind::Binary).then_some(mean),
        signal_strength: spec.signal_strength,
        seed: spec.seed,
        feature_model: "synthetic correlated Gaussian features; correlation structure is arbitrary".into(),
    }
}

fn standardize(v: &mut [f64]) {
    let (mean, std, _) = sample_moments(v);
    let std = if std > 0.0 { std } else { 1.0 };
    v.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

/// Features and a unit-variance latent score correlated with them.
fn features_and_latent(spec: &SynthSpec) -> (DMatrix<f64>, Vec<f64>) {
    let root = RandomSource::from_seed(spec.seed);
    let z = gaussian_matrix(spec.n, spec.d, 1.0, &mut root.derive(0));
    let mut mixing = DMatrix::identity(spec.d, spec.d)
        + gaussian_matrix(spec.d, spec.d, 0.5 / (spec.d as f64).sqrt(), &mut root.derive(1));
    for mut col in mixing.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    let x = z * mixing;
    let weights = gaussian_matrix(spec.d, 1, 1.0, &mut root.derive(2));
    let mut signal: Vec<f64> = (&x * weights).iter().copied().collect();
    standardize(&mut signal);
    let mut noise_rng = root.derive(3);
    let rho = spec.signal_strength;
    let mut latent: Vec<f64> = signal
        .iter()
        .map(|s| rho * s + (1.0 - rho * rho).sqrt() * noise_rng.sample::<f64, _>(StandardNormal))
        .collect();
    standardize(&mut latent);
    (x, latent)
}

/// Bisection for the increasing function `f` on `[lo, hi]` hitting `target`.
fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    if (f(lo) - target) * (f(hi) - target) > 0.0 {
        return None;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Skewed regression target `y = α + β·exp(a·s)` with `a` tuned to the
/// requested skewness and `α, β` to the mean and std, clipped to the range.
pub fn synth_regression_dataset(spec: &SynthSpec) -> Result<(RecordMatrix, TargetVector)> {
    spec.validate()?;
    let (x, latent) = features_and_latent(spec);
    let tilted = |a: f64| -> Vec<f64> { latent.iter().map(|s| (a * s).exp()).collect() };
    let skew_of = |a: f64| sample_moments(&tilted(a)).2;
    let a = if spec.target_skewness.abs() < 1e-12 {
        0.0
    } else {
        let sign = spec.target_skewness.signum();
        bisect(1e-6, 5.0, spec.target_skewness.abs(), |a| skew_of(sign * a) * sign)
            .map(|a| sign * a)
            .ok_or_else(|| TdpError::MomentMatchFailure(format!("skewness {} unreachable", spec.target_skewness)))?
    };
    let base = if a == 0.0 { latent.clone() } else { tilted(a) };
    let (m, s, _) = sample_moments(&base);
    let beta = spec.target_std / s;
    let alpha = spec.target_mean - beta * m;
    let (lo, hi) = spec.target_range;
    let y: Vec<f64> = base.iter().map(|v| (alpha + beta * v).clamp(lo, hi)).collect();
    let (mean, std, skew) = sample_moments(&y);
    if (mean - spec.target_mean).abs() > MEAN_TOLERANCE
        || (std - spec.target_std).abs() > STD_TOLERANCE
        || (skew - spec.target_skewness).abs() > SKEW_TOLERANCE
    {
        return Err(TdpError::MomentMatchFailure(format!(
            "got mean {mean:.4}, std {std:.4}, skewness {skew:.3} after clipping"
        )));
    }
    Ok((
        RecordMatrix::new(x)?,
        TargetVector {
            values: y,
            kind: TargetKind::Regression,
        },
    ))
}

/// Binary labels `1{u < σ(c + κ·s)}` with the intercept `c` tuned to the
/// requested positive rate.
pub fn synth_classification_dataset(spec: &SynthSpec) -> Result<(RecordMatrix, TargetVector)> {
    spec.validate()?;
    let (x, latent) = features_and_latent(spec);
    let mut u_rng = RandomSource::from_seed(spec.seed).derive(4);
    let uniforms: Vec<f64> = (0..spec.n).map(|_| u_rng.random::<f64>()).collect();
    let slope = 4.0 * spec.signal_strength;
    let labels = |c: f64| -> Vec<f64> {
        latent
            .iter()
            .zip(&uniforms)
            .map(|(s, u)| f64::from(*u < 1.0 / (1.0 + (-(c + slope * s)).exp())))
            .collect()
    };
    let rate = |c: f64| labels(c).iter().sum::<f64>() / spec.n as f64;
    let c = bisect(-30.0, 30.0, spec.positive_rate, rate)
        .ok_or_else(|| TdpError::MomentMatchFailure("positive rate unreachable".into()))?;
    let y = labels(c);
    let achieved = y.iter().sum::<f64>() / spec.n as f64;
    if (achieved - spec.positive_rate).abs() > RATE_TOLERANCE.max(1.0 / spec.n as f64) {
        return Err(TdpError::MomentMatchFailure(format!("positive rate {achieved:.4}")));
    }
    Ok((
        RecordMatrix::new(x)?,
        TargetVector {
            values: y,
            kind: TargetKind::Binary,
        },
    ))
}

/// Per-applicant loan economics. Revenue equals the interest earned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanBook {
    pub loan: Vec<f64>,
    pub revenue: Vec<f64>,
    pub interest: Vec<f64>,
    pub rate: f64,
    pub currency: String,
}

impl LoanBook {
    pub fn ledger(&self) -> ProfitLedger {
        ProfitLedger {
            loan: self.loan.clone(),
            revenue: self.revenue.clone(),
            interest: self.interest.clone(),
        }
    }
}

pub const DEFAULT_LOAN_MEDIAN: f64 = 10.0;
pub const DEFAULT_LOAN_LOG_STD: f64 = 0.5;
pub const DEFAULT_INTEREST_RATE: f64 = 0.15;

/// Log-normal loans with median $10, interest `rate·l`.
pub fn synth_loan_book(n: usize, rate: f64, rng: &mut RandomSource) -> Result<LoanBook> {
    if n == 0 {
        return Err(TdpError::invalid("loan book needs at least one applicant"));
    }
    if !(rate >= 0.0) {
        return Err(TdpError::invalid("interest rate must be non-negative"));
    }
    let mu = DEFAULT_LOAN_MEDIAN.ln();
    let loan: Vec<f64> = (0..n)
        .map(|_| (mu + DEFAULT_LOAN_LOG_STD * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect();
    let interest: Vec<f64> = loan.iter().map(|l| rate * l).collect();
    Ok(LoanBook {
        revenue: interest.clone(),
        interest,
        loan,
        rate,
        currency: "USD".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targeting::{evaluate_regression, kfold_split, lending_profit, EligibilityRule, DEFAULT_POPULATION};

    #[test]
    fn togo_moments_within_tolerance() {
        let spec = SynthSpec::togo();
        let (x, y) = synth_regression_dataset(&spec).unwrap();
        assert_eq!((x.nrows(), x.ncols()), (4201, 10));
        let r = moments_report(&spec, &y);
        assert!((r.mean - 0.073).abs() <= MEAN_TOLERANCE);
        assert!((r.std - 0.068).abs() <= STD_TOLERANCE);
        assert!((r.skewness - 4.207).abs() <= SKEW_TOLERANCE);
        assert!(r.min >= 0.005 && r.max <= 1.0);
    }

    #[test]
    fn nigeria_rate_within_tolerance() {
        let spec = SynthSpec::nigeria();
        let (x, y) = synth_classification_dataset(&spec).unwrap();
        assert_eq!((x.nrows(), x.ncols()), (20_788, 15));
        let rate = y.values.iter().sum::<f64>() / y.len() as f64;
        assert!((rate - 0.633).abs() <= RATE_TOLERANCE);
        assert!(y.values.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn generators_are_reproducible() {
        let spec = SynthSpec { n: 800, ..SynthSpec::togo() }.with_seed(9);
        let a = synth_regression_dataset(&spec).unwrap();
        let b = synth_regression_dataset(&spec).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let spec = SynthSpec { n: 500, ..SynthSpec::nigeria() }.with_seed(9);
        assert_eq!(
            synth_classification_dataset(&spec).unwrap().1,
            synth_classification_dataset(&spec).unwrap().1
        );
    }

    #[test]
    fn zero_signal_is_unpredictable() {
        let spec = SynthSpec {
            signal_strength: 0.0,
            ..SynthSpec::togo()
        };
        let (x, y) = synth_regression_dataset(&spec).unwrap();
        let folds = kfold_split(x.nrows(), 5, &mut RandomSource::from_seed(1)).unwrap();
        let eval =
            evaluate_regression(&x, &y.values, &folds, 1.0, &EligibilityRule::default(), DEFAULT_POPULATION).unwrap();
        assert!(eval.r_squared.abs() < 0.02, "{}", eval.r_squared);

        let signal = synth_regression_dataset(&SynthSpec::togo()).unwrap();
        let eval = evaluate_regression(
            &signal.0,
            &signal.1.values,
            &folds,
            1.0,
            &EligibilityRule::default(),
            DEFAULT_POPULATION,
        )
        .unwrap();
        assert!(eval.r_squared > 0.2, "{}", eval.r_squared);
    }

    #[test]
    fn loan_book_median_and_economics() {
        let book = synth_loan_book(20_788, DEFAULT_INTEREST_RATE, &mut RandomSource::from_seed(3)).unwrap();
        let mut sorted = book.loan.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!((median / 10.0 - 1.0).abs() < 0.05);
        assert!(book.interest.iter().zip(&book.loan).all(|(i, l)| (i - 0.15 * l).abs() < 1e-12));
        assert_eq!(book.revenue, book.interest);

        let flat = synth_loan_book(4, 0.0, &mut RandomSource::from_seed(3)).unwrap();
        let ledger = flat.ledger();
        assert_eq!(lending_profit(&[true, true, false, false], &[true, true, false, false], &ledger).unwrap(), 0.0);
        let defaults = lending_profit(&[false; 4], &[true; 4], &ledger).unwrap();
        assert!((defaults + flat.loan.iter().sum::<f64>()).abs() < 1e-12);
        assert_eq!(
            synth_loan_book(5, 0.15, &mut RandomSource::from_seed(8)).unwrap(),
            synth_loan_book(5, 0.15, &mut RandomSource::from_seed(8)).unwrap()
        );
    }

    #[test]
    fn moments_helper() {
        let (m, s, k) = sample_moments(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (2.0_f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(k, 0.0);
    }
}
