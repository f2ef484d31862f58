use std::fs;
use std::path::Path;

use fmo_core::report::SolveReport;
use serde::Serialize;

use crate::Failure;

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Failure::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| Failure::io(path, e))
}

pub fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| Failure::internal(e.to_string()))?;
    Ok(buf)
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::internal(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// `report.json`, `trace.csv`, `dvh.csv`, and `rounds.csv` for re-weighting runs.
pub fn write_report(dir: &Path, report: &SolveReport) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    write_atomic(&dir.join("report.json"), &json_bytes(report)?)?;
    write_atomic(&dir.join("trace.csv"), &csv_bytes(|b| report.write_trace_csv(b))?)?;
    write_atomic(&dir.join("dvh.csv"), &csv_bytes(|b| report.write_dvh_csv(b))?)?;
    if !report.rounds.is_empty() {
        write_atomic(&dir.join("rounds.csv"), &csv_bytes(|b| report.write_rounds_csv(b))?)?;
    }
    Ok(())
}
