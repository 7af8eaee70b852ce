//! CSV and JSON persistence. Matrices are stored with a header row and one
//! record per line; floats are written in Rust's shortest round-trip form so
//! a write/read cycle is bit-exact.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::RecordMatrix;
use crate::error::{Result, TdpError};

#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let idx = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TdpError::Parse(format!("no column named {name:?}")))?;
        Ok(&self.columns[idx])
    }

    /// Matrix of every column except those listed in `exclude`.
    pub fn to_matrix(&self, exclude: &[&str]) -> Result<(Vec<String>, RecordMatrix)> {
        let keep: Vec<usize> = (0..self.headers.len())
            .filter(|&j| !exclude.contains(&self.headers[j].as_str()))
            .collect();
        let n = self.nrows();
        let m = DMatrix::from_fn(n, keep.len(), |i, j| self.columns[keep[j]][i]);
        let names = keep.iter().map(|&j| self.headers[j].clone()).collect();
        Ok((names, RecordMatrix::new(m)?))
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                TdpError::Parse(format!("row {}: cannot parse {field:?} as a number", line + 1))
            })?;
            columns[j].push(v);
        }
    }
    Ok(Table { headers, columns })
}

pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, RecordMatrix)> {
    read_table(path)?.to_matrix(&[])
}

pub fn write_matrix_csv(path: &Path, headers: &[String], x: &RecordMatrix) -> Result<()> {
    if headers.len() != x.ncols() {
        return Err(TdpError::shape(x.ncols(), headers.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for i in 0..x.nrows() {
        w.write_record((0..x.ncols()).map(|j| x.get(i, j).to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_columns_csv(path: &Path, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        w.write_record(columns.iter().map(|c| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn default_headers(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let x = RecordMatrix::from_rows(&[vec![0.1, 1.0 / 3.0], vec![-2.5e-17, 7.0]]).unwrap();
        write_matrix_csv(&path, &default_headers(2), &x).unwrap();
        let (names, back) = read_matrix_csv(&path).unwrap();
        assert_eq!(names, vec!["x0", "x1"]);
        assert_eq!(back.values(), x.values());
    }

    #[test]
    fn named_column_and_exclusion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "a,y,b\n1,0,2\n3,1,4\n").unwrap();
        let t = read_table(&path).unwrap();
        assert_eq!(t.column("y").unwrap(), &[0.0, 1.0]);
        let (names, m) = t.to_matrix(&["y"]).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(m.row(1), vec![3.0, 4.0]);
        assert!(t.column("zz").is_err());
    }

    #[test]
    fn bad_number_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "a\nfoo\n").unwrap();
        assert!(matches!(read_table(&path), Err(TdpError::Parse(_))));
    }
}
