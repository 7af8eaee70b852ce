//! Greedy multidimensional Mondrian k-anonymity with every column treated as
//! a quasi-identifier. Leaves are generalized to their column means so the
//! output stays numeric.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::RecordMatrix;
use crate::error::{Result, TdpError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymityParams {
    pub k: usize,
    /// Columns used as quasi-identifiers; `None` means all of them.
    #[serde(default)]
    pub quasi_identifiers: Option<Vec<usize>>,
}

impl AnonymityParams {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(TdpError::invalid(format!("k = {k} must be at least 2")));
        }
        Ok(Self {
            k,
            quasi_identifiers: None,
        })
    }
}

/// A leaf of the partition tree together with the cut that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionNode {
    pub rows: Vec<usize>,
    pub split_column: Option<usize>,
    pub split_threshold: Option<f64>,
}

struct Splitter<'a> {
    x: &'a DMatrix<f64>,
    columns: Vec<usize>,
    global_range: Vec<f64>,
    k: usize,
}

impl Splitter<'_> {
    fn span(&self, rows: &[usize], j: usize) -> f64 {
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            let v = self.x[(r, j)];
            (lo.min(v), hi.max(v))
        });
        hi - lo
    }

    /// Columns with non-zero spread, widest normalized range first.
    fn candidate_columns(&self, rows: &[usize]) -> Vec<usize> {
        let mut scored: Vec<(usize, f64)> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(c, _)| self.global_range[*c] > 0.0)
            .map(|(c, &j)| (j, self.span(rows, j) / self.global_range[c]))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.into_iter().map(|(j, _)| j).collect()
    }

    fn sorted_by(&self, rows: &[usize], j: usize) -> Vec<usize> {
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| self.x[(a, j)].total_cmp(&self.x[(b, j)]).then(a.cmp(&b)));
        sorted
    }

    /// Cut at the lower median; rows equal to it go left.
    fn median_cut(&self, rows: &[usize], j: usize) -> Option<(Vec<usize>, Vec<usize>, f64)> {
        let sorted = self.sorted_by(rows, j);
        let median = self.x[(sorted[(sorted.len() - 1) / 2], j)];
        let cut = sorted.partition_point(|&r| self.x[(r, j)] <= median);
        (cut >= self.k && sorted.len() - cut >= self.k)
            .then(|| (sorted[..cut].to_vec(), sorted[cut..].to_vec(), median))
    }

    /// Positional split in half, ignoring ties.
    fn relaxed_cut(&self, rows: &[usize], j: usize) -> (Vec<usize>, Vec<usize>, f64) {
        let sorted = self.sorted_by(rows, j);
        let half = sorted.len() / 2;
        let threshold = self.x[(sorted[half - 1], j)];
        (sorted[..half].to_vec(), sorted[half..].to_vec(), threshold)
    }

    fn split(&self, rows: Vec<usize>, cut: (Option<usize>, Option<f64>)) -> Vec<PartitionNode> {
        if rows.len() < 2 * self.k {
            return vec![leaf(rows, cut)];
        }
        let candidates = self.candidate_columns(&rows);
        let chosen = candidates
            .iter()
            .find_map(|&j| self.median_cut(&rows, j).map(|c| (j, c)))
            .or_else(|| candidates.first().map(|&j| (j, self.relaxed_cut(&rows, j))));
        match chosen {
            None => vec![leaf(rows, cut)],
            Some((j, (left, right, threshold))) => {
                let here = (Some(j), Some(threshold));
                let (mut a, b) = if left.len() + right.len() > 4096 {
                    rayon::join(|| self.split(left, here), || self.split(right, here))
                } else {
                    (self.split(left, here), self.split(right, here))
                };
                a.extend(b);
                a
            }
        }
    }
}

fn leaf(mut rows: Vec<usize>, cut: (Option<usize>, Option<f64>)) -> PartitionNode {
    rows.sort_unstable();
    PartitionNode {
        rows,
        split_column: cut.0,
        split_threshold: cut.1,
    }
}

/// Leaves of the greedy partition of `x`.
pub fn mondrian_partition(x: &RecordMatrix, params: &AnonymityParams) -> Result<Vec<PartitionNode>> {
    if params.k < 1 {
        return Err(TdpError::invalid("k must be positive"));
    }
    let n = x.nrows();
    if n < params.k {
        return Err(TdpError::TooFewRows {
            actual: n,
            required: params.k,
        });
    }
    let columns = match &params.quasi_identifiers {
        None => (0..x.ncols()).collect::<Vec<_>>(),
        Some(cols) => {
            if let Some(bad) = cols.iter().find(|&&c| c >= x.ncols()) {
                return Err(TdpError::invalid(format!("quasi-identifier column {bad} out of range")));
            }
            cols.clone()
        }
    };
    let all: Vec<usize> = (0..n).collect();
    let mut splitter = Splitter {
        x: x.values(),
        columns: Vec::new(),
        global_range: Vec::new(),
        k: params.k,
    };
    splitter.global_range = columns.iter().map(|&j| splitter.span(&all, j)).collect();
    splitter.columns = columns;
    Ok(splitter.split(all, (None, None)))
}

/// k-anonymous release: every quasi-identifier value is replaced by its
/// leaf's mean. Rows keep their input order.
pub fn mondrian_anonymize(x: &RecordMatrix, params: &AnonymityParams) -> Result<RecordMatrix> {
    let leaves = mondrian_partition(x, params)?;
    let columns: Vec<usize> = match &params.quasi_identifiers {
        None => (0..x.ncols()).collect(),
        Some(c) => c.clone(),
    };
    let mut out = x.values().clone();
    for node in &leaves {
        for &j in &columns {
            let mean = node.rows.iter().map(|&r| x.get(r, j)).sum::<f64>() / node.rows.len() as f64;
            for &r in &node.rows {
                out[(r, j)] = mean;
            }
        }
    }
    RecordMatrix::new(out)
}

/// True iff every distinct row occurs at least `k` times.
pub fn verify_k_anonymity(x: &RecordMatrix, k: usize) -> bool {
    if k <= 1 {
        return true;
    }
    let mut counts: HashMap<Vec<u64>, usize> = HashMap::new();
    for i in 0..x.nrows() {
        let key = x
            .values()
            .row(i)
            .iter()
            .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
            .collect();
        *counts.entry(key).or_default() += 1;
    }
    counts.values().all(|&c| c >= k)
}
