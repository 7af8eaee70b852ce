//! Parameter algebra for targeted differential privacy (TDP).
//!
//! A `(B, ε, δ)`-TDP mechanism bounds the likelihood ratio only between
//! datasets whose single differing row moved by at most `B` in L2 distance.
//! With rows confined to the unit ball, `B = 2` recovers classic DP.
//!
//! [`accuracy_feasible`] is a *necessary* condition for γ-accurate targeting: when
//! it fails, no TDP algorithm with that budget can be γ-accurate. When it
//! holds, nothing is guaranteed about any particular model.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TdpError};

/// Ceiling that snaps values within rounding noise of an integer onto it, so
/// that e.g. `2 / 0.4` counts as exactly 5.
pub fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdpBudget {
    #[serde(rename = "B")]
    pub b: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl TdpBudget {
    pub fn new(b: f64, epsilon: f64, delta: f64) -> Result<Self> {
        let budget = Self { b, epsilon, delta };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b <= 2.0) {
            return Err(TdpError::invalid(format!("B = {} not in (0, 2]", self.b)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(TdpError::invalid(format!("epsilon = {} must be > 0", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(TdpError::invalid(format!("delta = {} not in [0, 1)", self.delta)));
        }
        Ok(())
    }
}

/// Input of the private projection: the projection step spends
/// `(ε₁, δ₁)`, the Gram-matrix step `(ε₂, δ₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitBudget {
    #[serde(rename = "B")]
    pub b: f64,
    pub epsilon1: f64,
    pub delta1: f64,
    pub epsilon2: f64,
    pub delta2: f64,
    pub k: usize,
}

impl SplitBudget {
    pub fn new(b: f64, epsilon1: f64, delta1: f64, epsilon2: f64, delta2: f64, k: usize) -> Result<Self> {
        let budget = Self {
            b,
            epsilon1,
            delta1,
            epsilon2,
            delta2,
            k,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b <= 2.0) {
            return Err(TdpError::invalid(format!("B = {} not in (0, 2]", self.b)));
        }
        if !(self.epsilon1 > 0.0) || !self.epsilon1.is_finite() {
            return Err(TdpError::invalid(format!("epsilon1 = {} must be > 0", self.epsilon1)));
        }
        if !(self.delta1 > 0.0 && self.delta1 < 0.5) {
            return Err(TdpError::invalid(format!("delta1 = {} not in (0, 1/2)", self.delta1)));
        }
        if !(self.epsilon2 > 0.0 && self.epsilon2 < 1.0) {
            return Err(TdpError::invalid(format!("epsilon2 = {} not in (0, 1)", self.epsilon2)));
        }
        if !(self.delta2 > 0.0 && self.delta2 < 1.0) {
            return Err(TdpError::invalid(format!("delta2 = {} not in (0, 1)", self.delta2)));
        }
        if self.k == 0 {
            return Err(TdpError::invalid("k must be positive"));
        }
        Ok(())
    }

    pub fn projection_step(&self) -> TdpBudget {
        TdpBudget {
            b: self.b,
            epsilon: self.epsilon1,
            delta: self.delta1,
        }
    }

    pub fn covariance_step(&self) -> TdpBudget {
        TdpBudget {
            b: self.b,
            epsilon: self.epsilon2,
            delta: self.delta2,
        }
    }

    /// `(B, ε₁ + ε₂, δ₁ + δ₂)`: sequential composition of the two steps.
    pub fn total(&self) -> TdpBudget {
        compose_sequential(&[self.projection_step(), self.covariance_step()])
            .expect("two budgets")
    }
}

/// A split budget before δ has been fixed; δ is derived from the number of
/// rows each privatization call sees (see `projection::delta_convention`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseBudget {
    #[serde(rename = "B")]
    pub b: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub k: usize,
}

impl BaseBudget {
    /// δ₁ = 2δ/3, δ₂ = δ/3.
    pub fn with_delta(&self, delta: f64) -> Result<SplitBudget> {
        SplitBudget::new(
            self.b,
            self.epsilon1,
            2.0 * delta / 3.0,
            self.epsilon2,
            delta / 3.0,
            self.k,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRequirement {
    pub gamma: f64,
}

impl AccuracyRequirement {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.5..1.0).contains(&gamma) {
            return Err(TdpError::invalid(format!("gamma = {gamma} not in [1/2, 1)")));
        }
        Ok(Self { gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicEquivalent {
    pub s: u64,
    pub epsilon_hat: f64,
    pub delta_hat: f64,
}

/// `Q = (δ + γ(e^ε − 1)) / (δ + (1 − γ)(e^ε − 1))`.
///
/// Evaluated as `(δ/t + γ) / (δ/t + 1 − γ)` with `t = e^ε − 1`, which stays
/// finite when `e^ε` overflows and tends to `γ / (1 − γ)` there.
pub fn q_factor(budget: &TdpBudget, req: &AccuracyRequirement) -> f64 {
    q_raw(budget.epsilon, budget.delta, req.gamma)
}

fn q_raw(epsilon: f64, delta: f64, gamma: f64) -> f64 {
    let t = epsilon.exp_m1();
    let r = if t.is_finite() { delta / t } else { 0.0 };
    (r + gamma) / (r + (1.0 - gamma))
}

fn required_steps(epsilon: f64, delta: f64, gamma: f64) -> f64 {
    let q = q_raw(epsilon, delta, gamma);
    ceil_snapped(q.ln() / epsilon)
}

/// `⌈2/B⌉ ≥ ⌈ln(Q)/ε⌉`. A `false` answer means γ-accurate targeting is
/// impossible at this budget; `true` is necessary, not sufficient.
pub fn accuracy_feasible(budget: &TdpBudget, req: &AccuracyRequirement) -> bool {
    ceil_snapped(2.0 / budget.b) >= required_steps(budget.epsilon, budget.delta, req.gamma)
}

/// Largest `B = 2/m` (m a positive integer) for which [`accuracy_feasible`].
pub fn max_feasible_b(epsilon: f64, delta: f64, gamma: f64) -> f64 {
    let m = required_steps(epsilon, delta, gamma).max(1.0);
    2.0 / m
}

/// Classic-DP parameters implied by a TDP budget for neighbours at L2
/// distance `distance` (2 is the worst case inside the unit ball).
pub fn switch_to_classic(budget: &TdpBudget, distance: f64) -> Result<ClassicEquivalent> {
    if !(distance > 0.0 && distance <= 2.0) {
        return Err(TdpError::invalid(format!("distance = {distance} not in (0, 2]")));
    }
    let s = ceil_snapped(distance / budget.b).max(1.0) as u64;
    Ok(ClassicEquivalent {
        s,
        epsilon_hat: s as f64 * budget.epsilon,
        delta_hat: amplified_delta(s, budget.epsilon, budget.delta),
    })
}

/// `min{1, (e^{sε} − 1)/(e^ε − 1) · δ}`.
pub fn amplified_delta(s: u64, epsilon: f64, delta: f64) -> f64 {
    if s <= 1 || delta == 0.0 {
        return delta.min(1.0);
    }
    let factor = (s as f64 * epsilon).exp_m1() / epsilon.exp_m1();
    if !factor.is_finite() {
        return 1.0;
    }
    (factor * delta).min(1.0)
}

pub fn compose_sequential(budgets: &[TdpBudget]) -> Result<TdpBudget> {
    if budgets.is_empty() {
        return Err(TdpError::EmptyList);
    }
    Ok(TdpBudget {
        b: budgets.iter().map(|b| b.b).fold(f64::INFINITY, f64::min),
        epsilon: budgets.iter().map(|b| b.epsilon).sum(),
        delta: budgets.iter().map(|b| b.delta).sum(),
    })
}

/// Only valid when the mechanisms run on disjoint rows; the caller vouches
/// for that.
pub fn compose_parallel(budgets: &[TdpBudget]) -> Result<TdpBudget> {
    if budgets.is_empty() {
        return Err(TdpError::EmptyList);
    }
    Ok(TdpBudget {
        b: budgets.iter().map(|b| b.b).fold(f64::INFINITY, f64::min),
        epsilon: budgets.iter().map(|b| b.epsilon).fold(f64::NEG_INFINITY, f64::max),
        delta: budgets.iter().map(|b| b.delta).fold(f64::NEG_INFINITY, f64::max),
    })
}
