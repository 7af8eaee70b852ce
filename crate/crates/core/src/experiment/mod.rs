//! Parameter-grid sweeps comparing the private projection with the original
//! data and Mondrian baselines, and their on-disk results.

mod config;
mod output;
mod sweep;

pub use config::{AttackSettings, Case, DataSource, ExperimentConfig, Grid, MIN_RECOMMENDED_REPETITIONS};
pub use output::{emit_results, read_raw_jsonl, read_tradeoff_csv, write_tradeoff_csv, TRADEOFF_SCHEMA};
pub use sweep::{
    cell_id, evaluate_features, load_dataset, metric_name, prepare_data, read_ledger, run_single, run_sweep,
    CellResult, DataSummary, Effectiveness, Manifest, PreparedData, RawRecord, SweepResult, TradeoffPoint,
    MANIFEST_FILE,
};
