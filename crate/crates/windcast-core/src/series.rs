//! Uniformly sampled scalar time series.

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};

/// A uniformly sampled series of finite values.
///
/// `start_time` and `step_seconds` describe the sampling grid; `values` holds
/// the samples in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    start_time: DateTime<Utc>,
    step_seconds: f64,
    name: String,
}

impl TimeSeries {
    /// Builds a series, checking it is non-empty, finite, and has step > 0.
    pub fn new(
        values: Vec<f64>,
        start_time: DateTime<Utc>,
        step_seconds: f64,
        name: impl Into<String>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries);
        }
        if !(step_seconds > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {step_seconds}"
            )));
        }
        if let Some(row) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row });
        }
        Ok(TimeSeries {
            values,
            start_time,
            step_seconds,
            name: name.into(),
        })
    }

    /// Builds a series on a default grid (epoch start, 600 s step).
    pub fn from_values(values: Vec<f64>, name: impl Into<String>) -> Result<Self> {
        Self::new(values, DateTime::<Utc>::UNIX_EPOCH, 600.0, name)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        self.start_time
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_seconds
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Timestamp of sample `index` on the sampling grid.
    pub fn time_at(&self, index: usize) -> DateTime<Utc> {
        self.start_time
            + chrono::Duration::milliseconds((self.step_seconds * 1000.0 * index as f64) as i64)
    }

    /// Replaces the values, keeping grid and name. Lengths may differ.
    pub fn with_values(&self, values: Vec<f64>, name: impl Into<String>) -> Result<Self> {
        Self::new(values, self.start_time, self.step_seconds, name)
    }

    /// Splits into `[0, boundary)` and `[boundary, len)`.
    ///
    /// Both parts keep the sampling grid; the second part's start time is
    /// shifted by `boundary` steps.
    pub fn split(&self, boundary: usize) -> Result<(TimeSeries, TimeSeries)> {
        if boundary == 0 || boundary >= self.len() {
            return Err(Error::BoundaryOutOfRange {
                boundary,
                len: self.len(),
            });
        }
        let head = TimeSeries {
            values: self.values[..boundary].to_vec(),
            start_time: self.start_time,
            step_seconds: self.step_seconds,
            name: format!("{}[..{}]", self.name, boundary),
        };
        let tail = TimeSeries {
            values: self.values[boundary..].to_vec(),
            start_time: self.time_at(boundary),
            step_seconds: self.step_seconds,
            name: format!("{}[{}..]", self.name, boundary),
        };
        Ok((head, tail))
    }
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Pearson correlation of two equal-length slices.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "correlation needs equal lengths");
    let ma = mean(a);
    let mb = mean(b);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}
