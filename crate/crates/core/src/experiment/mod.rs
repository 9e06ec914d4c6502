//! Experiment orchestration shared by the command line front end.

mod config;
mod pipeline;
mod sweep;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

pub use config::{
    derive_seed, AseSection, ExperimentConfig, FiberSection, KernelSection, SignalSection, SweepSection, MAX_MEMORY,
};
pub use pipeline::{
    analytical_kernels, evaluate_kernels, evaluate_reference, kernel_grid, kernel_rows, mean_rows, model_output,
    optimized_kernels, simulate, simulate_field, simulate_with, symbol_rows, transmitted_symbols, EvaluationRow,
    KernelRow, MeanRow, SymbolRow, Transmission,
};
pub use sweep::{merge, sweep, SweepLayout, SweepSummary};

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Serializes `rows` with a header into CSV bytes.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| crate::error::Error::Io(e.into_error()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, serde::Deserialize, Debug, PartialEq)]
    struct Row {
        a: f64,
        b: Option<usize>,
        c: String,
    }

    #[test]
    fn csv_round_trip_with_missing_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/rows.csv");
        let rows = vec![
            Row { a: 1.5, b: None, c: "ssfm".into() },
            Row { a: f64::INFINITY, b: Some(3), c: "nbgd".into() },
        ];
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_csv::<Row>(&path).unwrap(), rows);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("a,b,c\n1.5,,ssfm\n"));
        assert!(!dir.path().join("nested/rows.csv.partial").exists());
    }
}
