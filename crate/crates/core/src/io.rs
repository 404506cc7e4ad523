//! CSV datasets and atomic file writes.
//!
//! Two layouts are read. Interval data has columns `left,right,x1..xp`, with
//! `right` spelled `inf` for right-censored subjects. Exact/right-censored
//! data has columns `time,status,x1..xp`. Exact times become
//! `(T·(1 − ε), T]` with `ε = EPS_EXACT`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{IcrfError, Result};
use crate::survcurve::IntervalObservation;

pub const EPS_EXACT: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub observations: Vec<IntervalObservation>,
    pub feature_names: Vec<String>,
    pub tau: f64,
}

impl Dataset {
    pub fn new(observations: Vec<IntervalObservation>, feature_names: Vec<String>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(IcrfError::InvariantViolation(format!("tau must be positive and finite, got {tau}")));
        }
        let p = feature_names.len();
        if let Some(o) = observations.iter().find(|o| o.covariates.len() != p) {
            return Err(IcrfError::DimensionMismatch { expected: p, got: o.covariates.len() });
        }
        Ok(Self { observations, feature_names, tau })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn covariates(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.covariates.clone()).collect()
    }
}

/// Largest finite endpoint; the default study length for loaded data.
pub fn default_tau(observations: &[IntervalObservation]) -> f64 {
    observations
        .iter()
        .flat_map(|o| [o.left, o.right])
        .filter(|t| t.is_finite())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvLayout {
    Interval,
    TimeStatus,
}

fn parse_field(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|e| IcrfError::Parse {
        row,
        column: column.to_string(),
        message: format!("{raw:?}: {e}"),
    })
}

/// Reads a dataset; the layout is taken from the first two header names.
/// `tau` defaults to [`default_tau`].
pub fn load_csv(path: &Path, tau: Option<f64>) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    read_csv(file, tau)
}

pub fn read_csv<R: std::io::Read>(reader: R, tau: Option<f64>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(IcrfError::Parse { row: 0, column: "header".into(), message: "need at least two columns".into() });
    }
    let layout = match (headers[0].to_ascii_lowercase().as_str(), headers[1].to_ascii_lowercase().as_str()) {
        ("left", "right") => CsvLayout::Interval,
        ("time", "status") => CsvLayout::TimeStatus,
        (a, b) => {
            return Err(IcrfError::Parse {
                row: 0,
                column: "header".into(),
                message: format!("expected left,right or time,status, got {a},{b}"),
            })
        }
    };
    let feature_names = headers[2..].to_vec();
    let mut observations = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let row = k + 1;
        if record.len() != headers.len() {
            return Err(IcrfError::Parse {
                row,
                column: "*".into(),
                message: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let a = parse_field(&record[0], row, &headers[0])?;
        let b = parse_field(&record[1], row, &headers[1])?;
        let covariates = (2..headers.len())
            .map(|j| parse_field(&record[j], row, &headers[j]))
            .collect::<Result<Vec<f64>>>()?;
        let obs = match layout {
            CsvLayout::Interval if a == b => IntervalObservation::exact(b, EPS_EXACT, covariates),
            CsvLayout::Interval => IntervalObservation::new(a, b, covariates),
            CsvLayout::TimeStatus if b == 1.0 => IntervalObservation::exact(a, EPS_EXACT, covariates),
            CsvLayout::TimeStatus if b == 0.0 => IntervalObservation::new(a, f64::INFINITY, covariates),
            CsvLayout::TimeStatus => {
                return Err(IcrfError::Parse { row, column: headers[1].clone(), message: format!("status must be 0 or 1, got {b}") })
            }
        };
        observations.push(obs.map_err(|e| match e {
            IcrfError::InvariantViolation(m) => IcrfError::InvariantViolation(format!("row {row}: {m}")),
            other => other,
        })?);
    }
    if observations.is_empty() {
        return Err(IcrfError::EmptyInput);
    }
    let tau = tau.unwrap_or_else(|| default_tau(&observations));
    Dataset::new(observations, feature_names, tau)
}

/// Writes `left,right,<features>`; floats use the shortest representation
/// that parses back to the same value.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    atomic_write(path, &csv_bytes(data)?)
}

pub fn csv_bytes(data: &Dataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["left".to_string(), "right".to_string()];
    header.extend(data.feature_names.iter().cloned());
    w.write_record(&header)?;
    for o in &data.observations {
        let mut rec = vec![o.left.to_string(), o.right.to_string()];
        rec.extend(o.covariates.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| IcrfError::Serde(e.to_string()))
}

/// Reads covariate rows from a CSV whose columns are all features (extra
/// `left,right` or `time,status` leading columns are dropped).
pub fn load_covariates(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let lower: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    let skip = if lower.len() >= 2 && ((lower[0] == "left" && lower[1] == "right") || (lower[0] == "time" && lower[1] == "status")) {
        2
    } else {
        0
    };
    let mut rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        rows.push(
            (skip..headers.len())
                .map(|j| parse_field(record.get(j).unwrap_or(""), k + 1, &headers[j]))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok((headers[skip..].to_vec(), rows))
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

/// Writes to a temporary sibling and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
