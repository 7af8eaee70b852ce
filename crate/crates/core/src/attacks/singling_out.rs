use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{column_stds, Privatizer};
use crate::data::RecordMatrix;
use crate::error::{Result, TdpError};
use crate::rng::RandomSource;

/// Multipliers of the per-column release std used as net radii.
pub const SINGLING_OUT_SCALES: [f64; 5] = [0.1, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0];

fn row_key(x: &RecordMatrix, i: usize) -> Vec<u64> {
    x.values()
        .row(i)
        .iter()
        .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
        .collect()
}

/// Fraction of rows whose exact value tuple appears at least twice.
pub fn baseline_singling_out(x: &RecordMatrix) -> f64 {
    let mut counts: HashMap<Vec<u64>, usize> = HashMap::new();
    for i in 0..x.nrows() {
        *counts.entry(row_key(x, i)).or_default() += 1;
    }
    let shared: usize = counts.values().filter(|&&c| c >= 2).sum();
    shared as f64 / x.nrows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub eta: Vec<f64>,
    pub scale_constant: f64,
}

impl NetSpec {
    /// `η_j = c · std_j(release)`.
    pub fn from_release(release: &RecordMatrix, scale_constant: f64) -> Self {
        NetSpec {
            eta: column_stds(release).into_iter().map(|s| s * scale_constant).collect(),
            scale_constant,
        }
    }
}

/// How the released rows define the net around an original row `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetReading {
    /// Each released row `p` gives the predicate `|z_j − p_j| ≤ η_j ∀j`; an
    /// original row is singled out when some predicate matches it and no
    /// other original row.
    #[default]
    PerRecord,
    /// One global net: every `z_j` is within `η_j` of some released value in
    /// column `j` (not necessarily the same row).
    ColumnWise,
    /// One global net: some released row is within `η` of `z` on every column.
    SameRow,
}

fn within(a: &[f64], b: &[f64], eta: &[f64]) -> bool {
    a.iter().zip(b).zip(eta).all(|((x, y), e)| (x - y).abs() <= *e)
}

/// Rows of `data` sorted on one column so box queries scan a short window.
struct SortedIndex {
    column: usize,
    order: Vec<usize>,
    keys: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl SortedIndex {
    fn new(data: &RecordMatrix, eta: &[f64]) -> Self {
        // narrowest radius relative to the column's spread
        let stds = column_stds(data);
        let column = (0..data.ncols())
            .min_by(|&a, &b| {
                let ra = if stds[a] > 0.0 { eta[a] / stds[a] } else { f64::INFINITY };
                let rb = if stds[b] > 0.0 { eta[b] / stds[b] } else { f64::INFINITY };
                ra.total_cmp(&rb)
            })
            .unwrap_or(0);
        let mut order: Vec<usize> = (0..data.nrows()).collect();
        order.sort_by(|&a, &b| data.get(a, column).total_cmp(&data.get(b, column)).then(a.cmp(&b)));
        let keys = order.iter().map(|&i| data.get(i, column)).collect();
        SortedIndex {
            column,
            order,
            keys,
            rows: data.to_rows(),
        }
    }

    /// Up to `limit` indices of rows inside the box around `center`.
    fn query(&self, center: &[f64], eta: &[f64], limit: usize) -> Vec<usize> {
        let c = center[self.column];
        let e = eta[self.column];
        let start = self.keys.partition_point(|&k| k < c - e);
        let mut hits = Vec::new();
        for pos in start..self.keys.len() {
            if self.keys[pos] > c + e {
                break;
            }
            let i = self.order[pos];
            if within(&self.rows[i], center, eta) {
                hits.push(i);
                if hits.len() >= limit {
                    break;
                }
            }
        }
        hits
    }
}

fn check(x: &RecordMatrix, release: &RecordMatrix, spec: &NetSpec) -> Result<()> {
    if x.ncols() != release.ncols() || spec.eta.len() != x.ncols() {
        return Err(TdpError::shape(x.ncols(), release.ncols().min(spec.eta.len())));
    }
    if spec.eta.iter().any(|e| !(*e >= 0.0)) {
        return Err(TdpError::invalid("net radii must be non-negative"));
    }
    Ok(())
}

/// Which original rows lie inside the net.
pub fn net_members(x: &RecordMatrix, release: &RecordMatrix, spec: &NetSpec, reading: NetReading) -> Result<Vec<bool>> {
    check(x, release, spec)?;
    let eta = &spec.eta;
    Ok(match reading {
        NetReading::PerRecord | NetReading::SameRow => {
            let index = SortedIndex::new(release, eta);
            (0..x.nrows())
                .into_par_iter()
                .map(|i| !index.query(&x.row(i), eta, 1).is_empty())
                .collect()
        }
        NetReading::ColumnWise => {
            let sorted: Vec<Vec<f64>> = (0..x.ncols())
                .map(|j| {
                    let mut c = release.column(j);
                    c.sort_by(f64::total_cmp);
                    c
                })
                .collect();
            (0..x.nrows())
                .map(|i| {
                    (0..x.ncols()).all(|j| {
                        let v = x.get(i, j);
                        let col = &sorted[j];
                        let pos = col.partition_point(|&p| p < v - eta[j]);
                        pos < col.len() && col[pos] <= v + eta[j]
                    })
                })
                .collect()
        }
    })
}

/// Indices of original rows singled out by the net, ascending.
pub fn net_attack(x: &RecordMatrix, release: &RecordMatrix, spec: &NetSpec, reading: NetReading) -> Result<Vec<usize>> {
    check(x, release, spec)?;
    match reading {
        NetReading::PerRecord => {
            let index = SortedIndex::new(x, &spec.eta);
            let mut out: Vec<usize> = (0..release.nrows())
                .into_par_iter()
                .filter_map(|i| {
                    let hits = index.query(&release.row(i), &spec.eta, 2);
                    (hits.len() == 1).then(|| hits[0])
                })
                .collect();
            out.sort_unstable();
            out.dedup();
            Ok(out)
        }
        _ => {
            let members = net_members(x, release, spec, reading)?;
            let inside: Vec<usize> = (0..x.nrows()).filter(|&i| members[i]).collect();
            Ok(if inside.len() == 1 { inside } else { Vec::new() })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinglingOutReport {
    pub scales: Vec<f64>,
    /// Run-averaged protection per scale under the default reading.
    pub protection: Vec<f64>,
    pub worst_case_protection: f64,
    /// Same quantities under the column-wise global net.
    pub column_wise_protection: Vec<f64>,
    pub runs: usize,
    /// Protection of the unmodified data (shared rows).
    pub baseline: f64,
}

/// Protection of one release at every net scale: `(per-record, column-wise)`.
pub fn singling_out_scores(x: &RecordMatrix, release: &RecordMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.nrows() as f64;
    let mut default = Vec::with_capacity(SINGLING_OUT_SCALES.len());
    let mut column_wise = Vec::with_capacity(SINGLING_OUT_SCALES.len());
    for &c in &SINGLING_OUT_SCALES {
        let spec = NetSpec::from_release(release, c);
        default.push(1.0 - net_attack(x, release, &spec, NetReading::PerRecord)?.len() as f64 / n);
        column_wise.push(1.0 - net_attack(x, release, &spec, NetReading::ColumnWise)?.len() as f64 / n);
    }
    Ok((default, column_wise))
}

impl SinglingOutReport {
    /// Averages per-run scores from [`singling_out_scores`].
    pub fn from_runs(x: &RecordMatrix, per_run: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        if per_run.is_empty() {
            return Err(TdpError::invalid("runs must be at least 1"));
        }
        let runs = per_run.len();
        let average = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
            (0..SINGLING_OUT_SCALES.len())
                .map(|s| per_run.iter().map(|r| pick(r)[s]).sum::<f64>() / runs as f64)
                .collect()
        };
        let protection = average(|r| &r.0);
        let column_wise_protection = average(|r| &r.1);
        Ok(SinglingOutReport {
            scales: SINGLING_OUT_SCALES.to_vec(),
            worst_case_protection: protection.iter().copied().fold(f64::INFINITY, f64::min),
            protection,
            column_wise_protection,
            runs,
            baseline: baseline_singling_out(x),
        })
    }
}

/// Runs the privatizer `runs` times and attacks every release at each net
/// scale. Protection is the fraction of rows not singled out.
pub fn singling_out_protection(
    x: &RecordMatrix,
    privatizer: &dyn Privatizer,
    runs: usize,
    rng: &RandomSource,
) -> Result<SinglingOutReport> {
    if runs == 0 {
        return Err(TdpError::invalid("runs must be at least 1"));
    }
    let per_run: Vec<(Vec<f64>, Vec<f64>)> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let release = privatizer.release(x, &mut rng.derive(run as u64))?;
            singling_out_scores(x, &release)
        })
        .collect::<Result<_>>()?;
    SinglingOutReport::from_runs(x, &per_run)
}
