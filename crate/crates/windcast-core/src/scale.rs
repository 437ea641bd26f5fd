//! Min-max scaling between original units and a target interval.

use crate::error::{Error, Result};

/// Affine map fitted to a series: `scaled = lo + (x - min) / (max - min) * (hi - lo)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParams {
    pub min: f64,
    pub max: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ScaleParams {
    /// Fits the map sending `[min, max]` of `xs` onto `[lo, hi]`.
    ///
    /// A constant series has no well-defined map and is rejected.
    pub fn fit(xs: &[f64], lo: f64, hi: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptySeries);
        }
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            return Err(Error::ConstantSeries { value: min });
        }
        Ok(ScaleParams { min, max, lo, hi })
    }

    /// Fits the standard `[0, 1]` map.
    pub fn fit_unit(xs: &[f64]) -> Result<Self> {
        Self::fit(xs, 0.0, 1.0)
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.lo + (x - self.min) / (self.max - self.min) * (self.hi - self.lo)
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.min + (y - self.lo) / (self.hi - self.lo) * (self.max - self.min)
    }

    pub fn apply_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    pub fn invert_slice(&self, ys: &[f64]) -> Vec<f64> {
        ys.iter().map(|&y| self.invert(y)).collect()
    }
}
