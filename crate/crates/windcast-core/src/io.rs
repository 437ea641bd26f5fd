//! CSV ingestion and the fixed output schemas.
//!
//! Input schema: header `timestamp,wind_speed` (value column name is a
//! parameter), ISO-8601 timestamps, constant step. All numeric output is
//! printed with 16 significant digits so reruns are byte-comparable.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::emd::Decomposition;
use crate::error::{Error, Result};
use crate::metrics::ErrorMetrics;
use crate::series::TimeSeries;

/// Formats with 16 significant digits; round-trips f64 exactly in practice.
pub fn fmt_sig16(v: f64) -> String {
    format!("{v:.15e}")
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_timestamp(cell: &str, row: usize) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(cell) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(cell, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(Error::BadTimestamp {
        row,
        cell: cell.to_string(),
    })
}

/// Loads a series from CSV, inferring the step from the first two rows.
///
/// Row numbers in errors are 1-based file lines (header is line 1). Spacing
/// deviating more than 1% from the inferred step is rejected.
pub fn load_csv(path: &Path, column: &str) -> Result<TimeSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => io_err(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::InvalidParameter(e.to_string()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let time_idx = find("timestamp")?;
    let value_idx = find(column)?;

    let mut times: Vec<DateTime<Utc>> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let tcell = record.get(time_idx).unwrap_or("");
        let vcell = record.get(value_idx).unwrap_or("");
        times.push(parse_timestamp(tcell, row)?);
        let v: f64 = vcell.parse().map_err(|_| Error::NonNumericCell {
            row,
            cell: vcell.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { row });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    if values.len() == 1 {
        return TimeSeries::new(values, times[0], 600.0, column);
    }

    let step = (times[1] - times[0]).num_milliseconds() as f64 / 1000.0;
    if step <= 0.0 {
        return Err(Error::IrregularSpacing { row: 3 });
    }
    for i in 2..times.len() {
        let dt = (times[i] - times[i - 1]).num_milliseconds() as f64 / 1000.0;
        if (dt - step).abs() > 0.01 * step {
            return Err(Error::IrregularSpacing { row: i + 2 });
        }
    }
    TimeSeries::new(values, times[0], step, column)
}

/// Writes `timestamp,<column>` rows, RFC3339 timestamps.
pub fn write_series_csv(path: &Path, series: &TimeSeries, column: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "timestamp,{column}")?;
        for (i, v) in series.values().iter().enumerate() {
            writeln!(
                w,
                "{},{}",
                series.time_at(i).to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                fmt_sig16(*v)
            )?;
        }
        w.flush()
    };
    go().map_err(|e| io_err(path, e))
}

/// Writes `index,imf_1..imf_K,residue` rows.
pub fn write_decomposition_csv(path: &Path, d: &Decomposition) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        write!(w, "index")?;
        for k in 1..=d.imfs.len() {
            write!(w, ",imf_{k}")?;
        }
        writeln!(w, ",residue")?;
        for i in 0..d.input_length {
            write!(w, "{i}")?;
            for imf in &d.imfs {
                write!(w, ",{}", fmt_sig16(imf[i]))?;
            }
            writeln!(w, ",{}", fmt_sig16(d.residue[i]))?;
        }
        w.flush()
    };
    go().map_err(|e| io_err(path, e))
}

/// Writes `scope,metric,value` rows for each scope in the given order.
pub fn write_metrics_csv(path: &Path, rows: &[(String, ErrorMetrics)]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "scope,metric,value")?;
        for (scope, m) in rows {
            for (name, value) in m.named() {
                writeln!(w, "{scope},{name},{}", fmt_sig16(value))?;
            }
        }
        w.flush()
    };
    go().map_err(|e| io_err(path, e))
}

/// Writes `metric,value` rows for a single metric set.
pub fn write_eval_metrics_csv(path: &Path, m: &ErrorMetrics) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "metric,value")?;
        for (name, value) in m.named() {
            writeln!(w, "{name},{}", fmt_sig16(value))?;
        }
        w.flush()
    };
    go().map_err(|e| io_err(path, e))
}

/// Writes the per-sample forecast report.
pub fn write_report_csv(
    path: &Path,
    ground: &[f64],
    primary: &[f64],
    corrected: &[f64],
    residual_errors: &[f64],
    forecast_errors: &[f64],
) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "index,ground,primary,corrected,residual_error,forecast_error")?;
        for i in 0..ground.len() {
            writeln!(
                w,
                "{i},{},{},{},{},{}",
                fmt_sig16(ground[i]),
                fmt_sig16(primary[i]),
                fmt_sig16(corrected[i]),
                fmt_sig16(residual_errors[i]),
                fmt_sig16(forecast_errors[i])
            )?;
        }
        w.flush()
    };
    go().map_err(|e| io_err(path, e))
}
