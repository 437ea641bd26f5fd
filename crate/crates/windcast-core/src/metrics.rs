//! The five error indices: MAE, MAPE, MRE, MSE, RMSE.

use crate::error::{Error, Result};

/// Aggregate error indices over `n` compared points.
///
/// `mape` carries the x100 percent factor; `mre` is the same ratio without it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub mape: f64,
    pub mre: f64,
    pub mse: f64,
    pub rmse: f64,
    pub n: usize,
}

impl ErrorMetrics {
    /// Metric values as `(name, value)` pairs in a fixed report order.
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("mae", self.mae),
            ("mape", self.mape),
            ("mre", self.mre),
            ("mse", self.mse),
            ("rmse", self.rmse),
        ]
    }
}

/// Computes the five indices over paired ground-truth and forecast values.
///
/// MAPE and MRE divide by ground truth, so any exactly-zero ground value is a
/// hard error naming every offending index.
pub fn compute_metrics(ground: &[f64], forecast: &[f64]) -> Result<ErrorMetrics> {
    if ground.len() != forecast.len() {
        return Err(Error::LengthMismatch {
            left: ground.len(),
            right: forecast.len(),
        });
    }
    if ground.is_empty() {
        return Err(Error::EmptySeries);
    }
    let zero_indices: Vec<usize> = ground
        .iter()
        .enumerate()
        .filter(|(_, g)| **g == 0.0)
        .map(|(i, _)| i)
        .collect();
    if !zero_indices.is_empty() {
        return Err(Error::ZeroGroundTruth {
            indices: zero_indices,
        });
    }

    let n = ground.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut rel_sum = 0.0;
    for (g, f) in ground.iter().zip(forecast) {
        let d = g - f;
        abs_sum += d.abs();
        sq_sum += d * d;
        rel_sum += (d / g).abs();
    }
    let mse = sq_sum / n;
    Ok(ErrorMetrics {
        mae: abs_sum / n,
        mape: rel_sum / n * 100.0,
        mre: rel_sum / n,
        mse,
        rmse: mse.sqrt(),
        n: ground.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identical_series_give_zero_everywhere() {
        let m = compute_metrics(&[2.0, 4.0], &[2.0, 4.0]).unwrap();
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.mape, 0.0);
        assert_eq!(m.mre, 0.0);
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.n, 2);
    }

    #[test]
    fn two_point_hand_values() {
        let m = compute_metrics(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert_relative_eq!(m.mae, 1.0, max_relative = 1e-15);
        assert_relative_eq!(m.mse, 1.0, max_relative = 1e-15);
        assert_relative_eq!(m.rmse, 1.0, max_relative = 1e-15);
        assert_relative_eq!(m.mape, 75.0, max_relative = 1e-15);
        assert_relative_eq!(m.mre, 0.75, max_relative = 1e-15);
    }

    #[test]
    fn single_point_hand_values() {
        let m = compute_metrics(&[5.0], &[3.0]).unwrap();
        assert_relative_eq!(m.mae, 2.0, max_relative = 1e-15);
        assert_relative_eq!(m.mse, 4.0, max_relative = 1e-15);
        assert_relative_eq!(m.rmse, 2.0, max_relative = 1e-15);
        assert_relative_eq!(m.mape, 40.0, max_relative = 1e-15);
        assert_relative_eq!(m.mre, 0.4, max_relative = 1e-15);
    }

    #[test]
    fn zero_ground_truth_reports_all_offending_indices() {
        let err = compute_metrics(&[1.0, 0.0, 2.0, 0.0], &[1.0, 1.0, 1.0, 1.0]).unwrap_err();
        match err {
            Error::ZeroGroundTruth { indices } => assert_eq!(indices, vec![1, 3]),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(matches!(
            compute_metrics(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
    }

    proptest! {
        // Oracle equivalence: a naive per-definition re-implementation agrees
        // to 1e-12 relative, and the internal identities hold.
        #[test]
        fn matches_naive_reimplementation(
            pairs in prop::collection::vec((0.5f64..100.0, -50.0f64..50.0), 1..64)
        ) {
            let ground: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let forecast: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let m = compute_metrics(&ground, &forecast).unwrap();

            let t = ground.len() as f64;
            let mae: f64 = ground.iter().zip(&forecast).map(|(g, f)| (g - f).abs()).sum::<f64>() / t;
            let mape: f64 = ground.iter().zip(&forecast).map(|(g, f)| ((g - f) / g).abs()).sum::<f64>() / t * 100.0;
            let mre: f64 = ground.iter().zip(&forecast).map(|(g, f)| ((g - f) / g).abs()).sum::<f64>() / t;
            let mse: f64 = ground.iter().zip(&forecast).map(|(g, f)| (g - f) * (g - f)).sum::<f64>() / t;
            let rmse = mse.sqrt();

            prop_assert!((m.mae - mae).abs() <= 1e-12 * mae.abs().max(1.0));
            prop_assert!((m.mape - mape).abs() <= 1e-12 * mape.abs().max(1.0));
            prop_assert!((m.mre - mre).abs() <= 1e-12 * mre.abs().max(1.0));
            prop_assert!((m.mse - mse).abs() <= 1e-12 * mse.abs().max(1.0));
            prop_assert!((m.rmse - rmse).abs() <= 1e-12 * rmse.abs().max(1.0));

            // rmse^2 == mse, mre*100 == mape, mae <= rmse.
            prop_assert!((m.rmse * m.rmse - m.mse).abs() <= 1e-12 * m.mse.max(1e-300));
            prop_assert!((m.mre * 100.0 - m.mape).abs() <= 1e-12 * m.mape.max(1e-300));
            prop_assert!(m.mae <= m.rmse + 1e-12 * m.rmse.max(1.0));
        }
    }
}
