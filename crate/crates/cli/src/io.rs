use std::io::Write;
use std::path::Path;

use hgmt::cloud::WeightedCloud;
use hgmt::HPoint;
use serde::Serialize;

use crate::error::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// JSON cloud file, or CSV rows `x1..x_{2n+1},weight` with `k` and the resolution taken from the config.
pub fn read_cloud(path: &Path, k: usize, resolution: f64) -> Result<WeightedCloud, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if is_csv(path) {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CliError::Parse(format!("{} row {}: {e}", path.display(), i + 1)))?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| CliError::Parse(format!("{} row {}: {e}", path.display(), i + 1)))?;
            rows.push(row);
        }
        return Ok(WeightedCloud::from_rows(k, resolution, &rows)?);
    }
    serde_json::from_str::<serde_json::Value>(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Ok(WeightedCloud::from_json(&text)?)
}

/// Writes through a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, e))?;
    write_atomic(path, &bytes)
}

pub fn write_cloud(path: &Path, cloud: &WeightedCloud) -> Result<(), CliError> {
    if is_csv(path) {
        let dim = 2 * cloud.n() + 1;
        let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
        header.push("weight".into());
        let rows: Vec<Vec<String>> = cloud
            .points()
            .iter()
            .zip(cloud.weights())
            .map(|(p, w)| p.coords().iter().chain(std::iter::once(w)).map(|v| v.to_string()).collect())
            .collect();
        return write_csv(path, &header, &rows);
    }
    let mut s = cloud.to_json();
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// `"x1,...,x2n+1"`.
pub fn parse_point(s: &str, n: usize) -> Result<HPoint, CliError> {
    let coords = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| CliError::Parse(format!("center '{s}': {e}")))?;
    if coords.len() != 2 * n + 1 {
        return Err(CliError::Parse(format!("center '{s}' has {} coordinates, expected {}", coords.len(), 2 * n + 1)));
    }
    Ok(HPoint::from_coords(&coords)?)
}
