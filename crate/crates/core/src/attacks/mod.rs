//! Audit attacks against a release and the protection scores built on them.
//!
//! Attacks see the privatization algorithm and its parameters but never its
//! random state.

mod attribute;
mod distinguishing;
mod singling_out;

pub use attribute::{
    attribute_inference_protection, attribute_success, failure_proportions, known_counts, nn_attribute_attack,
    AttributeCell, AttributeConfig, AttributeInferenceReport,
};
pub use distinguishing::{distinguishing_protection, non_private_distinguishing, DistinguishingReport};
pub use singling_out::{
    baseline_singling_out, net_attack, net_members, singling_out_protection, singling_out_scores, NetReading, NetSpec,
    SinglingOutReport, SINGLING_OUT_SCALES,
};

use crate::calculus::BaseBudget;
use crate::data::RecordMatrix;
use crate::error::Result;
use crate::projection::privatize_partitioned;
use crate::rng::RandomSource;

/// Something that turns a dataset into a release an attacker can study.
pub trait Privatizer: Sync {
    fn release(&self, x: &RecordMatrix, rng: &mut RandomSource) -> Result<RecordMatrix>;
}

impl<F> Privatizer for F
where
    F: Fn(&RecordMatrix, &mut RandomSource) -> Result<RecordMatrix> + Sync,
{
    fn release(&self, x: &RecordMatrix, rng: &mut RandomSource) -> Result<RecordMatrix> {
        self(x, rng)
    }
}

/// Publishes the data unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPrivatizer;

impl Privatizer for IdentityPrivatizer {
    fn release(&self, x: &RecordMatrix, _rng: &mut RandomSource) -> Result<RecordMatrix> {
        Ok(x.clone())
    }
}

/// The private projection on `partitions` row blocks. The release is
/// multiplied back by `k`: the factor is public, so an attacker would undo it.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionPrivatizer {
    pub base: BaseBudget,
    pub partitions: usize,
}

impl Privatizer for ProjectionPrivatizer {
    fn release(&self, x: &RecordMatrix, rng: &mut RandomSource) -> Result<RecordMatrix> {
        let out = privatize_partitioned(x, &self.base, self.partitions, rng)?;
        RecordMatrix::new(out.x_priv.into_values() * self.base.k as f64)
    }
}

/// Population standard deviation of every column.
pub(crate) fn column_stds(x: &RecordMatrix) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| crate::data::column_moments(x.values(), j).1)
        .collect()
}
