//! The private projection mechanism.
//!
//! Records are mapped to `R^k` with a sparse random sign matrix and perturbed
//! with Gaussian noise (`(B, ε₁, δ₁)`-TDP). A noisy Gram matrix, also
//! Gaussian-perturbed (`(B, ε₂, δ₂)`-TDP), supplies an orthonormal basis used
//! to map the noisy projection back to `R^d`. The release satisfies
//! `(B, ε₁ + ε₂, δ₁ + δ₂)`-TDP.
//!
//! Without noise the release equals `X / k`, because
//! `X R (VᵀR)† Vᵀ = X V Vᵀ = X` for any orthonormal `V` and full-rank `VᵀR`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{
    compose_parallel, switch_to_classic, BaseBudget, ClassicEquivalent, SplitBudget, TdpBudget,
};
use crate::data::{validate_l2_ball, RecordMatrix};
use crate::error::{Result, TdpError};
use crate::linalg::PseudoInverse;
use crate::rng::RandomSource;

/// Probability that an entry of the projection matrix is zero.
pub const ZERO_PROBABILITY: f64 = 1.0 / 3.0;

/// `d x k` matrix with entries drawn uniformly from `{-1, 0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    entries: DMatrix<f64>,
}

impl ProjectionMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn d(&self) -> usize {
        self.entries.nrows()
    }

    pub fn k(&self) -> usize {
        self.entries.ncols()
    }

    /// Counts of `-1`, `0` and `+1`.
    pub fn symbol_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for v in self.entries.iter() {
            counts[(*v as i64 + 1) as usize] += 1;
        }
        counts
    }

    pub fn zero_fraction(&self) -> f64 {
        self.symbol_counts()[1] as f64 / self.entries.len() as f64
    }
}

pub fn sample_projection(d: usize, k: usize, rng: &mut RandomSource) -> Result<ProjectionMatrix> {
    if d == 0 || k == 0 {
        return Err(TdpError::invalid("projection dimensions must be positive"));
    }
    let entries = DMatrix::from_fn(d, k, |_, _| (rng.random_range(0..3_i32) - 1) as f64);
    Ok(ProjectionMatrix { entries })
}

/// Step 2: `P = k⁻¹ X R`.
pub fn project(x: &DMatrix<f64>, r: &ProjectionMatrix) -> DMatrix<f64> {
    (x * &r.entries) / r.k() as f64
}

/// Noise scale for the projection step.
///
/// `σ = (B/√k) · √(d·ln((2/3)(e−1)+1) − ln(δ₁/2)/k) · √(2(ln(1/δ₁)+ε₁)) / ε₁`
pub fn projection_sigma_raw(b: f64, epsilon1: f64, delta1: f64, k: usize, d: usize) -> f64 {
    let k = k as f64;
    let mgf = ((1.0 - ZERO_PROBABILITY) * (std::f64::consts::E - 1.0) + 1.0).ln();
    let alpha = b / k.sqrt() * (d as f64 * mgf - (delta1 / 2.0).ln() / k).sqrt();
    alpha * (2.0 * ((1.0 / delta1).ln() + epsilon1)).sqrt() / epsilon1
}

pub fn projection_sigma(budget: &SplitBudget, d: usize) -> f64 {
    projection_sigma_raw(budget.b, budget.epsilon1, budget.delta1, budget.k, d)
}

/// Noise scale for the Gram-matrix step: `σ = 2B√(2 ln(1.25/δ₂)) / ε₂`.
pub fn covariance_sigma_raw(b: f64, epsilon2: f64, delta2: f64) -> Result<f64> {
    if !(delta2 > 0.0 && delta2 < 1.25) {
        return Err(TdpError::invalid(format!(
            "delta2 = {delta2} leaves ln(1.25/delta2) non-positive"
        )));
    }
    if !(epsilon2 > 0.0) {
        return Err(TdpError::invalid("epsilon2 must be positive"));
    }
    Ok(2.0 * b * (2.0 * (1.25 / delta2).ln()).sqrt() / epsilon2)
}

pub fn covariance_sigma(budget: &SplitBudget) -> f64 {
    covariance_sigma_raw(budget.b, budget.epsilon2, budget.delta2)
        .expect("SplitBudget domain keeps delta2 in (0, 1)")
}

/// i.i.d. `N(0, σ²)` matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, sigma: f64, rng: &mut RandomSource) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Symmetric `d x d` noise: entries with `i >= j` drawn i.i.d. `N(0, σ²)`,
/// the rest mirrored.
pub fn symmetric_gaussian(d: usize, sigma: f64, rng: &mut RandomSource) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in j..d {
            let v = sigma * rng.sample::<f64, _>(StandardNormal);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    Calibrated,
    /// Both perturbations disabled. Only for testing the reconstruction
    /// algebra; results are marked insecure.
    #[cfg(feature = "insecure-zero-noise")]
    ForcedZero,
}

impl NoiseMode {
    fn is_insecure(self) -> bool {
        self != NoiseMode::Calibrated
    }
}

/// δ bookkeeping: δ = (⌈n / partitions⌉ + 1)⁻¹, δ₁ = 2δ/3, δ₂ = δ/3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaConvention {
    pub delta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub max_partition_rows: usize,
    pub partitions: usize,
}

pub fn delta_convention(n: usize, partitions: usize) -> Result<DeltaConvention> {
    if n == 0 || partitions == 0 {
        return Err(TdpError::invalid("n and partitions must be positive"));
    }
    let max_rows = n.div_ceil(partitions);
    let delta = 1.0 / (max_rows as f64 + 1.0);
    Ok(DeltaConvention {
        delta,
        delta1: 2.0 * delta / 3.0,
        delta2: delta / 3.0,
        max_partition_rows: max_rows,
        partitions,
    })
}

/// Result of a privatization run.
///
/// `budget` is the per-call split budget; `total` the guarantee of the whole
/// release (sequential over the two steps, parallel over partitions).
#[derive(Debug, Clone)]
pub struct PrivatizationOutput {
    pub x_priv: RecordMatrix,
    pub budget: SplitBudget,
    pub total: TdpBudget,
    pub classic_equivalent: ClassicEquivalent,
    pub sigma_projection: f64,
    pub sigma_covariance: f64,
    pub partition_count: usize,
    /// Input row indices of each block, in block order.
    pub partition_rows: Vec<Vec<usize>>,
    pub delta_convention: Option<DeltaConvention>,
    pub insecure: bool,
}

/// Serializable summary of a [`PrivatizationOutput`] (everything but the data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub status: String,
    pub rows: usize,
    pub cols: usize,
    pub budget: SplitBudget,
    pub total: TdpBudget,
    pub classic_equivalent: ClassicEquivalent,
    pub sigma_projection: f64,
    pub sigma_covariance: f64,
    pub partition_count: usize,
    pub delta_convention: Option<DeltaConvention>,
}

impl PrivatizationOutput {
    pub fn certificate(&self) -> Certificate {
        Certificate {
            status: if self.insecure { "INSECURE" } else { "ok" }.into(),
            rows: self.x_priv.nrows(),
            cols: self.x_priv.ncols(),
            budget: self.budget,
            total: self.total,
            classic_equivalent: self.classic_equivalent,
            sigma_projection: self.sigma_projection,
            sigma_covariance: self.sigma_covariance,
            partition_count: self.partition_count,
            delta_convention: self.delta_convention,
        }
    }
}

/// Intermediate matrices of one run, for inspection and tests.
#[derive(Debug, Clone)]
pub struct ProjectionTrace {
    pub r: ProjectionMatrix,
    pub p: DMatrix<f64>,
    pub p_priv: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub c_priv: DMatrix<f64>,
    pub v_t: DMatrix<f64>,
}

fn check_inputs(x: &RecordMatrix, budget: &SplitBudget) -> Result<()> {
    budget.validate()?;
    if !validate_l2_ball(x) {
        return Err(TdpError::NotInUnitBall);
    }
    if budget.k < x.ncols() {
        return Err(TdpError::invalid(format!(
            "k = {} must be at least d = {}",
            budget.k,
            x.ncols()
        )));
    }
    Ok(())
}

pub fn privatize(x: &RecordMatrix, budget: &SplitBudget, rng: &mut RandomSource) -> Result<PrivatizationOutput> {
    privatize_with(x, budget, rng, NoiseMode::Calibrated)
}

pub fn privatize_with(
    x: &RecordMatrix,
    budget: &SplitBudget,
    rng: &mut RandomSource,
    mode: NoiseMode,
) -> Result<PrivatizationOutput> {
    privatize_traced(x, budget, rng, mode).map(|(out, _)| out)
}

pub fn privatize_traced(
    x: &RecordMatrix,
    budget: &SplitBudget,
    rng: &mut RandomSource,
    mode: NoiseMode,
) -> Result<(PrivatizationOutput, ProjectionTrace)> {
    check_inputs(x, budget)?;
    let (n, d, k) = (x.nrows(), x.ncols(), budget.k);
    let sigma_p = projection_sigma(budget, d);
    let sigma_c = covariance_sigma(budget);
    let (noise_p, noise_c) = if mode.is_insecure() {
        (0.0, 0.0)
    } else {
        (sigma_p, sigma_c)
    };

    let xv = x.values();
    let r = sample_projection(d, k, rng)?;
    let p = project(xv, &r);
    let p_priv = if noise_p > 0.0 {
        &p + gaussian_matrix(n, k, noise_p, rng)
    } else {
        p.clone()
    };

    let gram = xv.tr_mul(xv);
    let c_priv = if noise_c > 0.0 {
        &gram + symmetric_gaussian(d, noise_c, rng)
    } else {
        gram.clone()
    };
    let v_t = c_priv
        .clone()
        .svd(false, true)
        .v_t
        .ok_or_else(|| TdpError::invalid("SVD of the noisy Gram matrix failed"))?;

    let basis_proj = &v_t * r.entries();
    let pinv = PseudoInverse::new(&basis_proj)?;
    if pinv.rank < d {
        return Err(TdpError::RankDeficientProjection {
            rank: pinv.rank,
            required: d,
        });
    }
    let x_priv = pinv.apply_right(&p_priv) * &v_t;

    let total = budget.total();
    let out = PrivatizationOutput {
        x_priv: RecordMatrix::new(x_priv)?,
        budget: *budget,
        total,
        classic_equivalent: switch_to_classic(&total, 2.0)?,
        sigma_projection: sigma_p,
        sigma_covariance: sigma_c,
        partition_count: 1,
        partition_rows: vec![(0..n).collect()],
        delta_convention: None,
        insecure: mode.is_insecure(),
    };
    let trace = ProjectionTrace {
        r,
        p,
        p_priv,
        gram,
        c_priv,
        v_t,
    };
    Ok((out, trace))
}

/// Random disjoint row sets covering `0..n`, sizes differing by at most one.
pub fn partition_rows(n: usize, partitions: usize, rng: &mut RandomSource) -> Result<Vec<Vec<usize>>> {
    if partitions == 0 {
        return Err(TdpError::invalid("partitions must be positive"));
    }
    if n < partitions {
        return Err(TdpError::TooFewRows {
            actual: n,
            required: partitions,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let (base, extra) = (n / partitions, n % partitions);
    let mut parts = Vec::with_capacity(partitions);
    let mut start = 0;
    for p in 0..partitions {
        let len = base + usize::from(p < extra);
        parts.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(parts)
}

pub fn privatize_partitioned(
    x: &RecordMatrix,
    base: &BaseBudget,
    partitions: usize,
    rng: &mut RandomSource,
) -> Result<PrivatizationOutput> {
    privatize_partitioned_with(x, base, partitions, rng, NoiseMode::Calibrated)
}

/// Splits the rows at random into `partitions` near-equal blocks, privatizes
/// each block on its own stream and reassembles rows in input order.
pub fn privatize_partitioned_with(
    x: &RecordMatrix,
    base: &BaseBudget,
    partitions: usize,
    rng: &mut RandomSource,
    mode: NoiseMode,
) -> Result<PrivatizationOutput> {
    let n = x.nrows();
    let convention = delta_convention(n, partitions)?;
    let budget = base.with_delta(convention.delta)?;
    check_inputs(x, &budget)?;
    let parts = partition_rows(n, partitions, &mut rng.derive(0))?;
    let root = rng.clone();

    let outputs: Vec<PrivatizationOutput> = parts
        .par_iter()
        .enumerate()
        .map(|(p, rows)| {
            let sub = x.select_rows(rows)?;
            privatize_with(&sub, &budget, &mut root.derive(1 + p as u64), mode)
        })
        .collect::<Result<_>>()?;

    let mut values = DMatrix::zeros(n, x.ncols());
    for (rows, out) in parts.iter().zip(&outputs) {
        for (local, &global) in rows.iter().enumerate() {
            values.set_row(global, &out.x_priv.values().row(local));
        }
    }
    let totals: Vec<TdpBudget> = outputs.iter().map(|o| o.total).collect();
    let total = compose_parallel(&totals)?;
    Ok(PrivatizationOutput {
        x_priv: RecordMatrix::new(values)?,
        budget,
        total,
        classic_equivalent: switch_to_classic(&total, 2.0)?,
        sigma_projection: projection_sigma(&budget, x.ncols()),
        sigma_covariance: covariance_sigma(&budget),
        partition_count: partitions,
        partition_rows: parts,
        delta_convention: Some(convention),
        insecure: mode.is_insecure(),
    })
}
