use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calculus::BaseBudget;
use crate::error::{Result, TdpError};
use crate::projection::delta_convention;
use crate::targeting::{DEFAULT_LOGISTIC_LAMBDA, DEFAULT_PERCENTILE, DEFAULT_POPULATION, DEFAULT_RIDGE_LAMBDA};

/// Repetition counts below this are allowed but flagged.
pub const MIN_RECOMMENDED_REPETITIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// Consumption regression with percentile eligibility.
    Togo,
    /// Loan-default classification with a profit model.
    Nigeria,
}

impl Case {
    pub fn default_partitions(self) -> usize {
        match self {
            Case::Togo => 1,
            Case::Nigeria => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    pub epsilon1: Vec<f64>,
    pub epsilon2: Vec<f64>,
    pub k: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            b: vec![0.05, 0.075, 0.1, 0.25, 0.5, 0.75, 1.0, 2.0],
            epsilon1: vec![2.0, 3.0],
            epsilon2: vec![0.5, 0.9999],
            k: 10_000,
        }
    }
}

impl Grid {
    /// Every `(B, ε₁, ε₂)` combination, `B` varying slowest.
    pub fn budgets(&self) -> Vec<BaseBudget> {
        let mut out = Vec::new();
        for &b in &self.b {
            for &epsilon1 in &self.epsilon1 {
                for &epsilon2 in &self.epsilon2 {
                    out.push(BaseBudget {
                        b,
                        epsilon1,
                        epsilon2,
                        k: self.k,
                    });
                }
            }
        }
        out
    }
}

/// Where the data comes from. Without files a synthetic dataset of the
/// configured case is generated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSource {
    pub features: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Loan ledger with `loan,revenue,interest` columns (lending case).
    pub ledger: Option<PathBuf>,
    /// Row count of the synthetic dataset; the case default when absent.
    pub synthetic_rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSettings {
    pub singling_out: bool,
    pub attribute_inference: bool,
    pub holdout: usize,
    /// Privatizer repeats for attribute inference; the cell's repetition
    /// count when absent.
    pub attribute_repeats: Option<usize>,
}

impl Default for AttackSettings {
    fn default() -> Self {
        AttackSettings {
            singling_out: true,
            attribute_inference: true,
            holdout: 500,
            attribute_repeats: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub case: Case,
    pub grid: Grid,
    pub repetitions: usize,
    pub folds: usize,
    pub seed: u64,
    pub mondrian_k: Vec<usize>,
    /// Row blocks privatized independently; the case default when absent.
    pub partitions: Option<usize>,
    pub ridge_lambda: f64,
    pub logistic_lambda: f64,
    pub percentile: f64,
    pub population: f64,
    pub approval_threshold: f64,
    pub interest_rate: f64,
    pub attacks: AttackSettings,
    pub data: DataSource,
    pub output_dir: PathBuf,
    /// Skip cells already recorded in the output directory's manifest.
    pub resume: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            case: Case::Togo,
            grid: Grid::default(),
            repetitions: 50,
            folds: 5,
            seed: 0,
            mondrian_k: (2..=10).collect(),
            partitions: None,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            logistic_lambda: DEFAULT_LOGISTIC_LAMBDA,
            percentile: DEFAULT_PERCENTILE,
            population: DEFAULT_POPULATION,
            approval_threshold: 0.5,
            interest_rate: crate::synth::DEFAULT_INTEREST_RATE,
            attacks: AttackSettings::default(),
            data: DataSource::default(),
            output_dir: PathBuf::from("results"),
            resume: false,
        }
    }
}

impl ExperimentConfig {
    pub fn for_case(case: Case) -> Self {
        ExperimentConfig {
            case,
            ..Default::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn partition_count(&self) -> usize {
        self.partitions.unwrap_or_else(|| self.case.default_partitions())
    }

    /// Checks every grid budget against the parameter domains, given the
    /// number of rows that will be privatized.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.repetitions == 0 {
            return Err(TdpError::invalid("repetitions must be at least 1"));
        }
        if self.folds < 2 {
            return Err(TdpError::invalid("need at least two folds"));
        }
        if self.grid.b.is_empty() || self.grid.epsilon1.is_empty() || self.grid.epsilon2.is_empty() {
            return Err(TdpError::invalid("grid lists must be non-empty"));
        }
        if self.mondrian_k.iter().any(|&k| k < 2) {
            return Err(TdpError::invalid("Mondrian k values must be at least 2"));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(TdpError::invalid("percentile must lie in (0, 1)"));
        }
        if !(self.population > 0.0) {
            return Err(TdpError::invalid("population must be positive"));
        }
        let convention = delta_convention(n, self.partition_count())?;
        for base in self.grid.budgets() {
            base.with_delta(convention.delta)?;
        }
        Ok(())
    }

    pub fn low_repetition_warning(&self) -> Option<String> {
        (self.repetitions < MIN_RECOMMENDED_REPETITIONS).then(|| {
            format!(
                "{} repetitions is below the recommended {MIN_RECOMMENDED_REPETITIONS}; averages will be noisy",
                self.repetitions
            )
        })
    }
}
