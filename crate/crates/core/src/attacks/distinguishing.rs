use serde::{Deserialize, Serialize};

use crate::calculus::{amplified_delta, ceil_snapped, SplitBudget};
use crate::error::Result;

/// Worst-case expected privacy loss of the two noisy steps after converting
/// the targeted guarantee to a classic one at distance 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistinguishingReport {
    pub s_hat: u64,
    pub epsilon1_hat: f64,
    pub delta1_hat: f64,
    pub epsilon2_hat: f64,
    pub delta2_hat: f64,
    /// `None` when the converted δ reaches 1 and the loss is unbounded.
    pub e3: Option<f64>,
    pub e4: Option<f64>,
    pub u: Option<f64>,
    pub d_score: f64,
}

/// `𝒟 = 1 / (𝒰 + 1)` with `𝒰 = ε̂₁² / (4(ln(1/δ̂₁) + ε₁)) + ε̂₂² / (16 ln(1.25/δ̂₂))`.
///
/// The first denominator keeps the unconverted ε₁. Any δ̂ᵢ ≥ 1 makes
/// `𝒰 = ∞` and `𝒟 = 0`.
pub fn distinguishing_protection(budget: &SplitBudget) -> Result<DistinguishingReport> {
    budget.validate()?;
    let s = ceil_snapped(2.0 / budget.b).max(1.0) as u64;
    let e1 = s as f64 * budget.epsilon1;
    let e2 = s as f64 * budget.epsilon2;
    let d1 = amplified_delta(s, budget.epsilon1, budget.delta1);
    let d2 = amplified_delta(s, budget.epsilon2, budget.delta2);
    let e3 = (d1 < 1.0).then(|| e1 * e1 / (4.0 * ((1.0 / d1).ln() + budget.epsilon1)));
    let e4 = (d2 < 1.0).then(|| e2 * e2 / (16.0 * (1.25 / d2).ln()));
    let u = e3.zip(e4).map(|(a, b)| a + b).filter(|u| u.is_finite());
    Ok(DistinguishingReport {
        s_hat: s,
        epsilon1_hat: e1,
        delta1_hat: d1,
        epsilon2_hat: e2,
        delta2_hat: d2,
        e3,
        e4,
        u,
        d_score: u.map_or(0.0, |u| 1.0 / (u + 1.0)),
    })
}

/// Publishing the original data offers no protection.
pub fn non_private_distinguishing() -> f64 {
    0.0
}
