//! Residual-error forecaster: a one-hidden-layer perceptron with exactly two
//! tanh units, trained by Levenberg-Marquardt on lagged error samples.
//!
//! The net maps a window of the last `lags` (scaled) residual errors to the
//! next one: `y = tanh(sum_h tanh(x . w_h + b_h) * sw_h + b_out)`. Biases are
//! trainable weights on a clamped unit input. Callers scale targets into
//! (-1, 1) so the output tanh can realize them.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scale::ScaleParams;

pub const HIDDEN_UNITS: usize = 2;

/// Damping schedule and stop criteria for Levenberg-Marquardt.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub max_iters: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Stop once an accepted step improves the loss by less than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            initial_damping: 1e-2,
            damping_up: 10.0,
            damping_down: 10.0,
            tolerance: 1e-12,
            seed: 0,
        }
    }
}

impl LmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.initial_damping > 0.0) {
            return bad(format!("initial damping must be > 0, got {}", self.initial_damping));
        }
        if !(self.damping_up > 1.0) || !(self.damping_down > 1.0) {
            return bad(format!(
                "damping factors must exceed 1, got up {} down {}",
                self.damping_up, self.damping_down
            ));
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        Ok(())
    }
}

/// Damping beyond this is treated as a converged plateau; a singular system
/// at this level is reported as an error instead.
const MAX_DAMPING: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMlp {
    pub lags: usize,
    /// `input_weights[i][h]` connects lag `i` to hidden unit `h`.
    pub input_weights: Vec<[f64; HIDDEN_UNITS]>,
    pub hidden_bias: [f64; HIDDEN_UNITS],
    pub output_weights: [f64; HIDDEN_UNITS],
    pub output_bias: f64,
}

impl ResidualMlp {
    /// Small random weights from a seed-derived stream.
    pub fn new(lags: usize, seed: u64) -> Result<Self> {
        if lags == 0 {
            return Err(Error::InvalidParameter("lag count must be at least 1".into()));
        }
        let mut rng = rng_from(seed, "mlp-init", 0);
        let mut draw = || rng.gen_range(-0.5..0.5);
        let input_weights = (0..lags).map(|_| [draw(), draw()]).collect();
        Ok(Self {
            lags,
            input_weights,
            hidden_bias: [draw(), draw()],
            output_weights: [draw(), draw()],
            output_bias: draw(),
        })
    }

    pub fn zeroed(lags: usize) -> Result<Self> {
        if lags == 0 {
            return Err(Error::InvalidParameter("lag count must be at least 1".into()));
        }
        Ok(Self {
            lags,
            input_weights: vec![[0.0; HIDDEN_UNITS]; lags],
            hidden_bias: [0.0; HIDDEN_UNITS],
            output_weights: [0.0; HIDDEN_UNITS],
            output_bias: 0.0,
        })
    }

    /// Parameters in a fixed order: per hidden unit its input weights then
    /// bias, then the output weights, then the output bias.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for h in 0..HIDDEN_UNITS {
            for w in &self.input_weights {
                flat.push(w[h]);
            }
            flat.push(self.hidden_bias[h]);
        }
        flat.extend_from_slice(&self.output_weights);
        flat.push(self.output_bias);
        flat
    }

    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                left: flat.len(),
                right: self.param_count(),
            });
        }
        let mut it = flat.iter().copied();
        for h in 0..HIDDEN_UNITS {
            for w in self.input_weights.iter_mut() {
                w[h] = it.next().unwrap();
            }
            self.hidden_bias[h] = it.next().unwrap();
        }
        for h in 0..HIDDEN_UNITS {
            self.output_weights[h] = it.next().unwrap();
        }
        self.output_bias = it.next().unwrap();
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        HIDDEN_UNITS * (self.lags + 1) + HIDDEN_UNITS + 1
    }
}

/// Forward pass plus the hidden activations, which the Jacobian reuses.
fn forward_parts(net: &ResidualMlp, x: &[f64]) -> (f64, [f64; HIDDEN_UNITS]) {
    let mut hidden = [0.0; HIDDEN_UNITS];
    let mut out_net = net.output_bias;
    for h in 0..HIDDEN_UNITS {
        let mut acc = net.hidden_bias[h];
        for (xi, w) in x.iter().zip(&net.input_weights) {
            acc += xi * w[h];
        }
        hidden[h] = acc.tanh();
        out_net += hidden[h] * net.output_weights[h];
    }
    (out_net.tanh(), hidden)
}

/// Evaluate the net on one lag window. Output lies in (-1, 1).
pub fn mlp_forward(net: &ResidualMlp, x: &[f64]) -> Result<f64> {
    if x.len() != net.lags {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: net.lags,
        });
    }
    Ok(forward_parts(net, x).0)
}

/// Exact partials of each prediction with respect to every parameter,
/// one row per sample, columns in flatten order.
// Explicit `h` indexing keeps the column walk aligned with flatten order.
#[allow(clippy::needless_range_loop)]
pub fn jacobian(net: &ResidualMlp, batch: &[Vec<f64>]) -> Result<Array2<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptySeries);
    }
    let p = net.param_count();
    let mut j = Array2::zeros((batch.len(), p));
    for (row, x) in batch.iter().enumerate() {
        if x.len() != net.lags {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: net.lags,
            });
        }
        let (y, hidden) = forward_parts(net, x);
        let g_out = 1.0 - y * y;
        let mut col = 0;
        for h in 0..HIDDEN_UNITS {
            let g_hidden = g_out * net.output_weights[h] * (1.0 - hidden[h] * hidden[h]);
            for xi in x {
                j[[row, col]] = g_hidden * xi;
                col += 1;
            }
            j[[row, col]] = g_hidden; // bias: unit input
            col += 1;
        }
        for h in 0..HIDDEN_UNITS {
            j[[row, col]] = g_out * hidden[h];
            col += 1;
        }
        j[[row, col]] = g_out;
    }
    Ok(j)
}

/// Solve `A x = b` for symmetric positive-definite `A` via Cholesky.
/// Returns `None` when a pivot is not strictly positive.
fn solve_spd(a: &Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = a.clone();
    for j in 0..n {
        let mut d = l[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut v = l[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / d;
        }
    }
    // Forward then back substitution.
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[[i, k]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l[[k, i]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    Some(y)
}

fn batch_mse(net: &ResidualMlp, samples: &[(Vec<f64>, f64)]) -> Result<f64> {
    let mut acc = 0.0;
    for (x, t) in samples {
        let r = t - mlp_forward(net, x)?;
        acc += r * r;
    }
    let loss = acc / samples.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteActivation {
            stage: "levenberg-marquardt loss".into(),
        });
    }
    Ok(loss)
}

/// Train in place by Levenberg-Marquardt: solve `(J^T J + lambda I) d = J^T r`,
/// accept the step and relax the damping when the loss drops, otherwise
/// stiffen and retry. Returns the loss trace (initial loss first, then one
/// entry per accepted step), non-increasing by construction.
pub fn train_lm(
    net: &mut ResidualMlp,
    samples: &[(Vec<f64>, f64)],
    params: &LmParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptySeries);
    }
    for (x, t) in samples {
        if x.len() != net.lags {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: net.lags,
            });
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation {
                stage: "training sample".into(),
            });
        }
    }

    let p = net.param_count();
    let inputs: Vec<Vec<f64>> = samples.iter().map(|(x, _)| x.clone()).collect();
    let mut lambda = params.initial_damping;
    let mut loss = batch_mse(net, samples)?;
    let mut trace = vec![loss];

    'outer: for _ in 0..params.max_iters {
        let j = jacobian(net, &inputs)?;
        let mut residuals = Vec::with_capacity(samples.len());
        for (x, t) in samples {
            residuals.push(t - mlp_forward(net, x)?);
        }

        // g = J^T r; a vanishing gradient means the quadratic model is flat,
        // so the realizable-target case stops here with zero update.
        let mut g = vec![0.0; p];
        for (row, r) in residuals.iter().enumerate() {
            for c in 0..p {
                g[c] += j[[row, c]] * r;
            }
        }
        if g.iter().all(|v| *v == 0.0) {
            break;
        }

        let jtj = j.t().dot(&j);
        loop {
            let mut a = jtj.clone();
            for d in 0..p {
                a[[d, d]] += lambda;
            }
            let Some(delta) = solve_spd(&a, &g) else {
                lambda *= params.damping_up;
                if lambda > MAX_DAMPING {
                    return Err(Error::SingularNormalEquations { lambda });
                }
                continue;
            };

            let mut candidate = net.clone();
            let mut flat = candidate.flatten_params();
            for (w, d) in flat.iter_mut().zip(&delta) {
                *w += d;
            }
            candidate.load_flat_params(&flat)?;
            let candidate_loss = batch_mse(&candidate, samples)?;

            if candidate_loss < loss {
                let decrease = loss - candidate_loss;
                *net = candidate;
                loss = candidate_loss;
                trace.push(loss);
                lambda = (lambda / params.damping_down).max(1e-15);
                if decrease < params.tolerance {
                    break 'outer;
                }
                break;
            }
            lambda *= params.damping_up;
            if lambda > MAX_DAMPING {
                // No descent direction at extreme stiffness: a plateau.
                break 'outer;
            }
        }
    }
    Ok(trace)
}

/// Autoregressive residual-error forecast. The history is mapped through
/// `scale`, rolled forward one step at a time, and each prediction is
/// inverse-scaled into the error domain.
pub fn forecast_errors(
    net: &ResidualMlp,
    error_history: &[f64],
    steps: usize,
    scale: &ScaleParams,
) -> Result<Vec<f64>> {
    if error_history.len() < net.lags {
        return Err(Error::InsufficientHistory {
            need: net.lags,
            have: error_history.len(),
        });
    }
    let mut buf = scale.apply_slice(error_history);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let window = &buf[buf.len() - net.lags..];
        let y = mlp_forward(net, window)?;
        buf.push(y);
        out.push(scale.invert(y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_net_outputs_zero() {
        let net = ResidualMlp::zeroed(4).unwrap();
        let y = mlp_forward(&net, &[0.3, -0.8, 2.0, 0.0]).unwrap();
        assert_eq!(y, 0.0);
    }

    #[test]
    fn output_is_strictly_inside_the_unit_interval() {
        let net = ResidualMlp::new(3, 5).unwrap();
        for probe in [
            vec![100.0, -100.0, 50.0],
            vec![0.0, 0.0, 0.0],
            vec![-1e6, 1e6, 1e6],
        ] {
            let y = mlp_forward(&net, &probe).unwrap();
            assert!(y.abs() < 1.0, "got {y}");
        }
    }

    #[test]
    fn forward_matches_nested_tanh_oracle() {
        let net = ResidualMlp::new(1, 91).unwrap();
        let x = 0.5;
        let y = mlp_forward(&net, &[x]).unwrap();
        let h0 = (x * net.input_weights[0][0] + net.hidden_bias[0]).tanh();
        let h1 = (x * net.input_weights[0][1] + net.hidden_bias[1]).tanh();
        let expect =
            (h0 * net.output_weights[0] + h1 * net.output_weights[1] + net.output_bias).tanh();
        assert_abs_diff_eq!(y, expect, epsilon = 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_lag_count() {
        let net = ResidualMlp::new(4, 0).unwrap();
        assert!(mlp_forward(&net, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn jacobian_of_zero_net_has_unit_output_bias_column() {
        let net = ResidualMlp::zeroed(3).unwrap();
        let batch = vec![vec![0.4, -0.2, 0.9], vec![1.5, 0.0, -0.3]];
        let j = jacobian(&net, &batch).unwrap();
        assert_eq!(j.dim(), (2, net.param_count()));
        let p = net.param_count();
        for row in 0..2 {
            // Output-weight columns equal the hidden activations, all zero.
            assert_eq!(j[[row, p - 3]], 0.0);
            assert_eq!(j[[row, p - 2]], 0.0);
            // Output-bias column is tanh'(0) = 1.
            assert_eq!(j[[row, p - 1]], 1.0);
        }
        assert!(jacobian(&net, &[]).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = ResidualMlp::new(4, 33).unwrap();
        let batch = vec![
            vec![0.2, -0.5, 0.8, 0.1],
            vec![-0.9, 0.4, 0.0, 0.6],
            vec![0.33, 0.21, -0.7, -0.2],
        ];
        let j = jacobian(&net, &batch).unwrap();
        let base = net.flatten_params();
        let h = 1e-6;
        for (row, x) in batch.iter().enumerate() {
            for c in 0..net.param_count() {
                let mut probe = net.clone();
                let mut flat = base.clone();
                flat[c] = base[c] + h;
                probe.load_flat_params(&flat).unwrap();
                let up = mlp_forward(&probe, x).unwrap();
                flat[c] = base[c] - h;
                probe.load_flat_params(&flat).unwrap();
                let down = mlp_forward(&probe, x).unwrap();
                let fd = (up - down) / (2.0 * h);
                let analytic = j[[row, c]];
                let tol = f64::max(1e-6 * analytic.abs().max(fd.abs()), 1e-10);
                assert!(
                    (analytic - fd).abs() <= tol,
                    "row {row} col {c}: {analytic} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn flatten_round_trips() {
        let net = ResidualMlp::new(6, 7).unwrap();
        let flat = net.flatten_params();
        assert_eq!(flat.len(), 2 * 7 + 3);
        let mut copy = ResidualMlp::zeroed(6).unwrap();
        copy.load_flat_params(&flat).unwrap();
        assert_eq!(copy, net);
        assert!(copy.load_flat_params(&flat[1..]).is_err());
    }

    #[test]
    fn realizable_targets_terminate_immediately_with_zero_update() {
        let net0 = ResidualMlp::new(2, 3).unwrap();
        let samples: Vec<(Vec<f64>, f64)> = (0..20)
            .map(|i| {
                let x = vec![(i as f64 * 0.17).sin(), (i as f64 * 0.29).cos()];
                let t = mlp_forward(&net0, &x).unwrap();
                (x, t)
            })
            .collect();
        let mut net = net0.clone();
        let trace = train_lm(&mut net, &samples, &LmParams::default()).unwrap();
        assert_eq!(trace, vec![0.0]);
        assert_eq!(net, net0);
    }

    #[test]
    fn fits_tanh_of_doubled_input() {
        let samples: Vec<(Vec<f64>, f64)> = (0..50)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / 49.0;
                (vec![x], (2.0 * x).tanh())
            })
            .collect();
        let mut net = ResidualMlp::new(1, 1).unwrap();
        let params = LmParams {
            max_iters: 200,
            ..Default::default()
        };
        let trace = train_lm(&mut net, &samples, &params).unwrap();
        let final_loss = *trace.last().unwrap();
        assert!(final_loss < 1e-6, "final MSE {final_loss}");
        assert!(trace.len() <= 201);
    }

    #[test]
    fn accepted_losses_never_increase() {
        // A noisy, non-realizable target exercises both accept and reject paths.
        let samples: Vec<(Vec<f64>, f64)> = (0..40)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                let b = (i as f64 * 0.61).cos();
                let t = 0.8 * (a * b + 0.3 * (i as f64 * 1.7).sin());
                (vec![a, b], t)
            })
            .collect();
        let mut net = ResidualMlp::new(2, 11).unwrap();
        let params = LmParams {
            max_iters: 60,
            ..Default::default()
        };
        let trace = train_lm(&mut net, &samples, &params).unwrap();
        assert!(trace.len() > 1);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0], "trace increased: {pair:?}");
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let samples: Vec<(Vec<f64>, f64)> = (0..30)
            .map(|i| (vec![(i as f64 * 0.2).sin()], 0.5 * (i as f64 * 0.2).cos()))
            .collect();
        let mut a = ResidualMlp::new(1, 42).unwrap();
        let mut b = ResidualMlp::new(1, 42).unwrap();
        let ta = train_lm(&mut a, &samples, &LmParams::default()).unwrap();
        let tb = train_lm(&mut b, &samples, &LmParams::default()).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let mut net = ResidualMlp::new(2, 0).unwrap();
        assert!(train_lm(&mut net, &[], &LmParams::default()).is_err());
        let bad_len = vec![(vec![1.0], 0.5)];
        assert!(train_lm(&mut net, &bad_len, &LmParams::default()).is_err());
        let bad_target = vec![(vec![1.0, 2.0], f64::NAN)];
        assert!(train_lm(&mut net, &bad_target, &LmParams::default()).is_err());
        let bad_params = LmParams {
            initial_damping: 0.0,
            ..Default::default()
        };
        assert!(train_lm(&mut net, &[(vec![0.0, 0.0], 0.1)], &bad_params).is_err());
    }

    #[test]
    fn zero_net_forecasts_the_inverse_scaled_origin() {
        let net = ResidualMlp::zeroed(3).unwrap();
        let scale = ScaleParams::fit(&[-2.0, 6.0], -0.9, 0.9).unwrap();
        let history = vec![1.0, -2.0, 6.0, 0.5];
        let out = forecast_errors(&net, &history, 4, &scale).unwrap();
        let origin = scale.invert(0.0);
        assert_eq!(out, vec![origin; 4]);
    }

    #[test]
    fn single_step_forecast_matches_forward_on_the_tail() {
        let net = ResidualMlp::new(3, 8).unwrap();
        let scale = ScaleParams::fit(&[-1.0, 1.0], -0.9, 0.9).unwrap();
        let history = vec![0.1, -0.4, 0.9, -0.2, 0.6];
        let out = forecast_errors(&net, &history, 1, &scale).unwrap();
        let tail: Vec<f64> = history[2..].iter().map(|&v| scale.apply(v)).collect();
        let expect = scale.invert(mlp_forward(&net, &tail).unwrap());
        assert_eq!(out, vec![expect]);
    }

    #[test]
    fn forecast_is_deterministic_and_needs_history() {
        let net = ResidualMlp::new(4, 2).unwrap();
        let scale = ScaleParams::fit(&[-1.0, 1.0], -0.9, 0.9).unwrap();
        let history = vec![0.2, -0.1, 0.05, 0.3];
        let a = forecast_errors(&net, &history, 6, &scale).unwrap();
        let b = forecast_errors(&net, &history, 6, &scale).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            forecast_errors(&net, &history[..3], 1, &scale),
            Err(Error::InsufficientHistory { need: 4, have: 3 })
        ));
    }
}
