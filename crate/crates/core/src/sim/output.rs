//! Result, summary, beampattern and trace files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{beampattern_rows, SystemConfig, TraceRow, TrialRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown output format `{other}` (csv, json)"))),
        }
    }
}

/// Mean and spread of the sum rate for one (scheme, SNR) group. Failed
/// records are counted in `excluded` and left out of the statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub snr_db: f64,
    pub trials: usize,
    pub excluded: usize,
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
    pub std_error: f64,
}

/// Groups in order of first appearance.
pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<(String, f64, Vec<f64>, usize)> = Vec::new();
    for r in records {
        let idx = match groups.iter().position(|g| g.0 == r.scheme && g.1 == r.snr_db) {
            Some(i) => i,
            None => {
                groups.push((r.scheme.clone(), r.snr_db, Vec::new(), 0));
                groups.len() - 1
            }
        };
        if r.is_ok() {
            groups[idx].2.push(r.sum_rate);
        } else {
            groups[idx].3 += 1;
        }
    }
    groups
        .into_iter()
        .map(|(scheme, snr_db, rates, excluded)| {
            let n = rates.len();
            let mean = if n > 0 { rates.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (rates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                scheme,
                snr_db,
                trials: n,
                excluded,
                mean_sum_rate: mean,
                std_sum_rate: std,
                std_error: if n > 0 { std / (n as f64).sqrt() } else { f64::NAN },
            }
        })
        .collect()
}

/// `dir/name.csv` -> `dir/name.summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.summary.csv"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Serialization {
                path: path.into(),
                message: format!("{other:?}"),
            },
        }
    } else {
        Error::Serialization {
            path: path.into(),
            message: e.to_string(),
        }
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn write_records_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    let receivers = records.iter().map(|r| r.per_user_rates.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = ["trial_id", "scheme", "snr_db"].map(String::from).to_vec();
    header.extend((1..=receivers).map(|k| format!("rate_{k}")));
    header.extend(
        [
            "sum_rate",
            "hybrid_residual",
            "outer_iterations",
            "gp_iterations",
            "min_grid_gain",
            "status",
            "es_backend",
        ]
        .map(String::from),
    );
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = vec![r.trial_id.to_string(), r.scheme.clone(), r.snr_db.to_string()];
        row.extend((0..receivers).map(|k| r.per_user_rates.get(k).map(f64::to_string).unwrap_or_default()));
        row.push(r.sum_rate.to_string());
        row.push(opt(&r.hybrid_residual));
        row.push(opt(&r.outer_iterations));
        row.push(opt(&r.gp_iterations));
        row.push(opt(&r.min_grid_gain));
        row.push(r.status.clone());
        row.push(r.es_backend.map(|b| b.as_str().to_string()).unwrap_or_default());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Serialization {
        path: path.into(),
        message: e.to_string(),
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_rows_csv<T: Serialize>(rows: &[T], header: &[&str], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write the per-(scheme, SNR) summary table.
pub fn write_summary(records: &[TrialRecord], path: &Path) -> Result<()> {
    write_rows_csv(
        &summarize(records),
        &["scheme", "snr_db", "trials", "excluded", "mean_sum_rate", "std_sum_rate", "std_error"],
        path,
    )
}

/// Write `records` to `path` and the summary next to it (see
/// [`summary_path`]). Returns the summary's path.
pub fn emit_results(records: &[TrialRecord], format: OutputFormat, path: &Path) -> Result<PathBuf> {
    match format {
        OutputFormat::Csv => write_records_csv(records, path)?,
        OutputFormat::Json => write_json(records, path)?,
    }
    let summary = summary_path(path);
    write_summary(records, &summary)?;
    Ok(summary)
}

pub fn read_results_json(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serialization {
        path: path.into(),
        message: e.to_string(),
    })
}

/// Write a `receiver,angle_deg,gain` table; see [`beampattern_rows`].
pub fn emit_beampattern(cfg: &SystemConfig, scheme: &str, angle_step_deg: f64, path: &Path) -> Result<usize> {
    let rows = beampattern_rows(cfg, scheme, angle_step_deg)?;
    write_rows_csv(&rows, &["receiver", "angle_deg", "gain"], path)?;
    Ok(rows.len())
}

/// Write a `scheme,trace,iteration,value` table.
pub fn emit_traces(rows: &[TraceRow], path: &Path) -> Result<()> {
    write_rows_csv(rows, &["scheme", "trace", "iteration", "value"], path)
}
