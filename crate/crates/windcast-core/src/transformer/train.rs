//! Minibatch Adam training over sliding windows, and the autoregressive
//! forecast that extends a history one step at a time.

use rand::Rng;

use super::backward::batch_loss_and_gradients;
use super::forward::{forward_cached, Window};
use super::model::TransformerModel;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Every stride-1 window over `series`: encoder span, teacher-forced decoder
/// input (shifted back one step so each decoder position sees the value
/// preceding its target), and the target span.
pub fn training_windows(series: &[f64], encoder_len: usize, decoder_len: usize) -> Vec<Window<'_>> {
    let span = encoder_len + decoder_len;
    if series.len() < span {
        return Vec::new();
    }
    (0..=series.len() - span)
        .map(|i| Window {
            encoder: &series[i..i + encoder_len],
            decoder_in: &series[i + encoder_len - 1..i + encoder_len - 1 + decoder_len],
            target: &series[i + encoder_len..i + span],
        })
        .collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Scale the gradient vector so its global L2 norm does not exceed `max_norm`.
fn clip_global_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// Train in place with minibatch Adam. One iteration is a full pass over the
/// shuffled windows; the returned trace holds the mean window loss of each
/// iteration. Bitwise deterministic for a given model seed, including across
/// thread counts.
pub fn train(model: &mut TransformerModel, series: &[f64]) -> Result<Vec<f64>> {
    let c = model.config.clone();
    if let Some(row) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { row });
    }
    let windows = training_windows(series, c.encoder_len, c.decoder_len);
    if windows.is_empty() {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            min: c.window_span(),
        });
    }

    let mut params = model.flatten_params();
    let mut adam = Adam::new(c.learning_rate, params.len());
    let mut trace = Vec::with_capacity(c.iterations);

    for iter in 0..c.iterations {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut rng = rng_from(c.seed, "shuffle", iter as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let step_seed = if c.dropout > 0.0 {
            Some(derive_seed(c.seed, "dropout-step", iter as u64))
        } else {
            None
        };

        let mut loss_sum = 0.0;
        for ids in order.chunks(c.batch_size) {
            let batch: Vec<(u64, Window)> =
                ids.iter().map(|&i| (i as u64, windows[i])).collect();
            let (loss, grads) = batch_loss_and_gradients(model, &batch, step_seed)?;
            let mut flat = grads.flatten_params();
            clip_global_norm(&mut flat, c.max_grad_norm);
            adam.step(&mut params, &flat);
            model.load_flat_params(&params)?;
            loss_sum += loss * ids.len() as f64;
        }
        trace.push(loss_sum / windows.len() as f64);
    }
    Ok(trace)
}

/// One-step-ahead prediction from the tail of `history`, using the same
/// window geometry as training: the decoder sees the last `decoder_len`
/// values and predicts the value after the final one.
pub fn predict_next(model: &TransformerModel, history: &[f64]) -> Result<f64> {
    let e = model.config.encoder_len;
    let d = model.config.decoder_len;
    let n = history.len();
    let need = model.config.min_history();
    if n < need {
        return Err(Error::InsufficientHistory { need, have: n });
    }
    let enc = &history[n + 1 - e - d..n + 1 - d];
    let dec = &history[n - d..n];
    let (preds, _) = forward_cached(model, enc, dec, None, None)?;
    Ok(preds[d - 1])
}

/// Autoregressive rollout: predict the next value, append it to the working
/// history, and repeat. Forecasting in one call or in consecutive calls with
/// intermediate appends yields identical values.
pub fn forecast_subseries(
    model: &TransformerModel,
    history: &[f64],
    steps: usize,
) -> Result<Vec<f64>> {
    let mut buf = history.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next = predict_next(model, &buf)?;
        buf.push(next);
        out.push(next);
    }
    Ok(out)
}
