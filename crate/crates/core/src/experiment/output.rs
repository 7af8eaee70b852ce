use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::sweep::{DataSummary, RawRecord, SweepResult, TradeoffPoint};
use crate::error::Result;
use crate::io::write_atomic;

/// Version tag written at the top of tradeoff.csv. Bump on column changes.
pub const TRADEOFF_SCHEMA: &str = "tradeoff-v1";

const COLUMNS: &str = "label,metric_name,B,epsilon1,epsilon2,k,delta,total_epsilon,total_delta,classic_s,\
classic_epsilon,classic_delta,partitions,mondrian_k,repetitions,failures,metric_mean,metric_std,\
relative_change,accuracy_mean,fpr_mean,singling_out,attribute_inference,distinguishing";

#[derive(Serialize)]
struct RunInfo<'a> {
    version: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    data: &'a DataSummary,
    cells: usize,
}

pub fn write_tradeoff_csv(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# {TRADEOFF_SCHEMA}; empty cells are not applicable; columns: {COLUMNS}")?;
    {
        let mut writer = csv::Writer::from_writer(&mut buf);
        for p in points {
            writer.serialize(p)?;
        }
        writer.flush()?;
    }
    write_atomic(path, &buf)
}

pub fn read_tradeoff_csv(path: &Path) -> Result<Vec<TradeoffPoint>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Into::into)).collect()
}

pub fn read_raw_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    reader
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Writes tradeoff.csv, run.json, raw.jsonl and reports.json into `dir`.
pub fn emit_results(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_tradeoff_csv(&dir.join("tradeoff.csv"), &result.points())?;
    let info = RunInfo {
        version: &result.version,
        seed: result.config.seed,
        config: &result.config,
        data: &result.data,
        cells: result.cells.len(),
    };
    write_atomic(&dir.join("run.json"), &serde_json::to_vec_pretty(&info)?)?;
    let mut raw = Vec::new();
    for record in result.cells.iter().flat_map(|c| &c.raw) {
        serde_json::to_writer(&mut raw, record)?;
        raw.push(b'\n');
    }
    write_atomic(&dir.join("raw.jsonl"), &raw)?;
    let reports: Vec<_> = result
        .cells
        .iter()
        .map(|c| {
            serde_json::json!({
                "cell": c.point.label,
                "singling_out": c.singling_out_report,
                "attribute_inference": c.attribute_report,
            })
        })
        .collect();
    write_atomic(&dir.join("reports.json"), &serde_json::to_vec_pretty(&reports)?)
}
