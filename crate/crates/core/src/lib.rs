//! Targeted differential privacy for tabular microdata: budget calculus,
//! the private projection mechanism, a Mondrian k-anonymity baseline,
//! targeting/lending evaluation, privacy attacks and synthetic data.

pub mod attacks;
pub mod calculus;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod mondrian;
pub mod projection;
pub mod rng;
pub mod synth;
pub mod targeting;

pub use error::{Result, TdpError};
pub use rng::RandomSource;
