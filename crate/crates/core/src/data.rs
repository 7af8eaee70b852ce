//! Dataset containers and the preprocessing pipeline applied before
//! privatization: column standardization, per-row clipping into the unit L2
//! ball, and target scaling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdpError};

/// Rows whose norm exceeds `1 + BALL_TOLERANCE` fail [`validate_l2_ball`].
pub const BALL_TOLERANCE: f64 = 1e-12;

/// An `n x d` real feature matrix. Once `normalized` is set every row lies in
/// the closed unit L2 ball.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMatrix {
    values: DMatrix<f64>,
    normalized: bool,
}

impl RecordMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(TdpError::shape(
                "at least 1x1",
                format!("{}x{}", values.nrows(), values.ncols()),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(TdpError::invalid(format!("non-finite entry at ({r}, {c})")));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(TdpError::shape(format!("{d} columns"), bad.len()));
        }
        Self::new(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Row-major copy, convenient for per-record scans.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.nrows()).map(|i| self.row(i)).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(TdpError::TooFewRows {
                actual: 0,
                required: 1,
            });
        }
        let m = DMatrix::from_fn(rows.len(), self.ncols(), |i, j| self.values[(rows[i], j)]);
        Ok(Self {
            values: m,
            normalized: self.normalized,
        })
    }

    pub(crate) fn with_normalized(mut self, flag: bool) -> Self {
        self.normalized = flag;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Regression,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetVector {
    pub values: Vec<f64>,
    pub kind: TargetKind,
}

impl TargetVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Everything needed to map standardized values back to the raw scale.
/// Column stds use the population convention (divide by n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub column_means: Vec<f64>,
    pub column_stds: Vec<f64>,
    pub row_scale_applied: Vec<f64>,
    pub target_min: Option<f64>,
    pub target_max: Option<f64>,
    pub std_convention: String,
}

/// Column mean and population standard deviation.
pub fn column_moments(x: &DMatrix<f64>, j: usize) -> (f64, f64) {
    let n = x.nrows() as f64;
    let col = x.column(j);
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_degenerate(std: f64, x: &DMatrix<f64>, j: usize) -> bool {
    let scale = x.column(j).iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    !(std > 16.0 * f64::EPSILON * scale)
}

pub fn standardize_columns(x: &RecordMatrix) -> Result<(RecordMatrix, PreprocessReport)> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut means = Vec::with_capacity(d);
    let mut stds = Vec::with_capacity(d);
    for j in 0..d {
        let (m, s) = column_moments(&x.values, j);
        if is_degenerate(s, &x.values, j) {
            return Err(TdpError::ZeroVarianceColumn(j));
        }
        means.push(m);
        stds.push(s);
    }
    let out = DMatrix::from_fn(n, d, |i, j| (x.values[(i, j)] - means[j]) / stds[j]);
    let report = PreprocessReport {
        column_means: means,
        column_stds: stds,
        row_scale_applied: vec![1.0; n],
        target_min: None,
        target_max: None,
        std_convention: "population".into(),
    };
    Ok((RecordMatrix::new(out)?, report))
}

/// Like [`standardize_columns`] but constant columns are only centred.
/// Used by the targeting harness on privatized or generalized matrices, where
/// a constant column is a legitimate outcome rather than an input error.
pub fn standardize_lenient(x: &RecordMatrix) -> RecordMatrix {
    let (n, d) = (x.nrows(), x.ncols());
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let (m, s) = column_moments(&x.values, j);
            (m, if is_degenerate(s, &x.values, j) { 1.0 } else { s })
        })
        .collect();
    let out = DMatrix::from_fn(n, d, |i, j| (x.values[(i, j)] - stats[j].0) / stats[j].1);
    RecordMatrix {
        values: out,
        normalized: false,
    }
}

/// Scales every row with norm above 1 back onto the unit sphere.
pub fn clip_rows_to_unit_ball(x: &RecordMatrix) -> RecordMatrix {
    clip_rows_with_scales(x).0
}

/// Same as [`clip_rows_to_unit_ball`], also returning the factor applied to
/// each row (1 for rows already inside the ball).
pub fn clip_rows_with_scales(x: &RecordMatrix) -> (RecordMatrix, Vec<f64>) {
    let mut values = x.values.clone();
    let mut scales = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let norm = values.row(i).norm();
        if norm > 1.0 {
            let s = 1.0 / norm;
            values.row_mut(i).scale_mut(s);
            scales.push(s);
        } else {
            scales.push(1.0);
        }
    }
    (
        RecordMatrix {
            values,
            normalized: true,
        },
        scales,
    )
}

pub fn scale_target_unit_interval(y: &[f64], kind: TargetKind) -> Result<TargetVector> {
    if y.is_empty() {
        return Err(TdpError::TooFewRows {
            actual: 0,
            required: 1,
        });
    }
    match kind {
        TargetKind::Binary => {
            if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
                return Err(TdpError::invalid(format!("binary target has value {bad}")));
            }
            Ok(TargetVector {
                values: y.to_vec(),
                kind,
            })
        }
        TargetKind::Regression => {
            let (lo, hi) = min_max(y);
            if !(hi > lo) {
                return Err(TdpError::DegenerateRange);
            }
            let span = hi - lo;
            Ok(TargetVector {
                values: y.iter().map(|v| (v - lo) / span).collect(),
                kind,
            })
        }
    }
}

pub(crate) fn min_max(y: &[f64]) -> (f64, f64) {
    y.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Full pipeline: standardize columns, clip rows, then scale a regression
/// target to `[0, 1]`.
pub fn preprocess(
    raw: &RecordMatrix,
    target: Option<(&[f64], TargetKind)>,
) -> Result<(RecordMatrix, Option<TargetVector>, PreprocessReport)> {
    let (standardized, mut report) = standardize_columns(raw)?;
    let (clipped, scales) = clip_rows_with_scales(&standardized);
    report.row_scale_applied = scales;
    let target = match target {
        Some((y, kind)) => {
            if y.len() != raw.nrows() {
                return Err(TdpError::shape(raw.nrows(), y.len()));
            }
            if kind == TargetKind::Regression {
                let (lo, hi) = min_max(y);
                report.target_min = Some(lo);
                report.target_max = Some(hi);
            }
            Some(scale_target_unit_interval(y, kind)?)
        }
        None => None,
    };
    Ok((clipped, target, report))
}

/// Sum of row-wise Euclidean distances.
pub fn cumulative_distance(a: &RecordMatrix, b: &RecordMatrix) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(TdpError::shape(
            format!("{}x{}", a.nrows(), a.ncols()),
            format!("{}x{}", b.nrows(), b.ncols()),
        ));
    }
    Ok((0..a.nrows())
        .map(|i| (a.values.row(i) - b.values.row(i)).norm())
        .sum())
}

pub fn validate_l2_ball(x: &RecordMatrix) -> bool {
    (0..x.nrows()).all(|i| x.values.row(i).norm() <= 1.0 + BALL_TOLERANCE)
}

/// Marks a matrix as normalized if it passes [`validate_l2_ball`].
pub fn certify_unit_ball(x: RecordMatrix) -> Result<RecordMatrix> {
    if validate_l2_ball(&x) {
        Ok(x.with_normalized(true))
    } else {
        Err(TdpError::NotInUnitBall)
    }
}
