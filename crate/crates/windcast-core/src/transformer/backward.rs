//! Exact gradients of the mean-squared-error loss with respect to every
//! model parameter, derived by hand from the forward pass.
//!
//! Conventions (column tokens): for a linear map `Y = W X`, the gradients
//! are `dW = dY X^T` and `dX = W^T dY`. The attention scores `Z = K^T Q / sqrt(l)`
//! give `dQ = K dZ / sqrt(l)` and `dK = Q dZ^T / sqrt(l)`; the column softmax
//! contributes `dZ = SW .* (dSW - <SW, dSW>_col)`; the normalization backward
//! lives next to its forward in `ops`.

use ndarray::{Array1, Array2, Axis};

use super::forward::{forward_cached, AttnCache, DropoutPlan, FfCache, ForwardCache, Window};
use super::model::{AttentionWeights, FeedForwardWeights, LayerNormParams, TransformerModel};
use super::ops::{gelu_prime, layer_norm_bwd, softmax_columns_bwd, LnCache};
use crate::error::{Error, Result};
use crate::parallel::ordered_map;
use crate::rng::derive_seed;

/// Windows per parallel chunk. Chunk boundaries and the serial reduction
/// order are fixed, so results are bitwise identical for any thread count.
const CHUNK: usize = 8;

fn add_norm_bwd(
    cache: &LnCache,
    params: &LayerNormParams,
    dout: &Array2<f64>,
    grads: &mut LayerNormParams,
) -> Array2<f64> {
    let (rows, cols) = dout.dim();
    let mut dxhat = Array2::zeros((rows, cols));
    for r in 0..rows {
        let mut dgain = 0.0;
        let mut dbias = 0.0;
        for t in 0..cols {
            let d = dout[[r, t]];
            dgain += d * cache.xhat[[r, t]];
            dbias += d;
            dxhat[[r, t]] = d * params.gain[r];
        }
        grads.gain[r] += dgain;
        grads.bias[r] += dbias;
    }
    layer_norm_bwd(cache, &dxhat)
}

fn ff_bwd(
    weights: &FeedForwardWeights,
    cache: &FfCache,
    dy: &Array2<f64>,
    grads: &mut FeedForwardWeights,
    dropout: f64,
) -> Array2<f64> {
    grads.w2 += &dy.dot(&cache.a.t());
    grads.b2 += &dy.sum_axis(Axis(1));
    let mut da = weights.w2.t().dot(dy);
    if let Some(keep) = &cache.keep {
        da = &(&da * keep) / (1.0 - dropout);
    }
    let du = &da * &cache.u.mapv(gelu_prime);
    grads.w1 += &du.dot(&cache.x.t());
    grads.b1 += &du.sum_axis(Axis(1));
    weights.w1.t().dot(&du)
}

/// Returns `(d x_q, d x_kv)`. For self-attention the caller adds the pair.
fn attn_bwd(
    weights: &AttentionWeights,
    cache: &AttnCache,
    dy: &Array2<f64>,
    grads: &mut AttentionWeights,
    l: usize,
    dropout: f64,
) -> (Array2<f64>, Array2<f64>) {
    let heads = weights.wq.len();
    let dh = weights.wq[0].nrows();
    let scale = 1.0 / (l as f64).sqrt();

    grads.wo += &dy.dot(&cache.concat.t());
    let dconcat = weights.wo.t().dot(dy);

    let mut dx_q = Array2::zeros(cache.x_q.dim());
    let mut dx_kv = Array2::zeros(cache.x_kv.dim());
    for h in 0..heads {
        let do_h = dconcat.slice(ndarray::s![h * dh..(h + 1) * dh, ..]);
        let (sw_used, dsw_scale) = match &cache.keep {
            Some(masks) => (
                &(&cache.sw[h] * &masks[h]) / (1.0 - dropout),
                Some(&masks[h]),
            ),
            None => (cache.sw[h].clone(), None),
        };
        let dv = do_h.dot(&sw_used.t());
        let mut dsw = cache.v[h].t().dot(&do_h);
        if let Some(mask) = dsw_scale {
            dsw = &(&dsw * mask) / (1.0 - dropout);
        }
        let dz = softmax_columns_bwd(&cache.sw[h], &dsw);
        let dq = cache.k[h].dot(&dz) * scale;
        let dk = cache.q[h].dot(&dz.t()) * scale;

        grads.wq[h] += &dq.dot(&cache.x_q.t());
        grads.wk[h] += &dk.dot(&cache.x_kv.t());
        grads.wv[h] += &dv.dot(&cache.x_kv.t());
        dx_q += &weights.wq[h].t().dot(&dq);
        dx_kv += &weights.wk[h].t().dot(&dk);
        dx_kv += &weights.wv[h].t().dot(&dv);
    }
    (dx_q, dx_kv)
}

fn embed_bwd(dx: &Array2<f64>, inputs: &[f64], dw: &mut Array1<f64>, db: &mut Array1<f64>) {
    for (t, &value) in inputs.iter().enumerate() {
        for r in 0..dx.nrows() {
            dw[r] += dx[[r, t]] * value;
            db[r] += dx[[r, t]];
        }
    }
}

/// Accumulate one window's parameter gradients, given the gradient of the
/// loss with respect to each prediction.
fn backward_window(
    model: &TransformerModel,
    cache: &ForwardCache,
    dpreds: &[f64],
    grads: &mut TransformerModel,
) {
    let l = model.config.embed_dim;
    let p = model.config.dropout;

    // Scalar read-out.
    let mut dy = Array2::zeros(cache.dec_out.dim());
    for (t, &dp) in dpreds.iter().enumerate() {
        grads.out_b[0] += dp;
        for r in 0..l {
            grads.out_w[r] += cache.dec_out[[r, t]] * dp;
            dy[[r, t]] = model.out_w[r] * dp;
        }
    }

    // Decoder stack, reversed. Cross-attention feeds gradient into the
    // encoder output from every decoder layer.
    let mut denc_out = Array2::zeros(cache.enc_out.dim());
    for (layer, gl, lc) in itertools_rev(&model.decoder, &mut grads.decoder, &cache.dec_layers) {
        let dsum3 = add_norm_bwd(&lc.ln3, &layer.norm3, &dy, &mut gl.norm3);
        let mut dy2 = dsum3.clone();
        dy2 += &ff_bwd(&layer.ff, &lc.ff, &dsum3, &mut gl.ff, p);

        let dsum2 = add_norm_bwd(&lc.ln2, &layer.norm2, &dy2, &mut gl.norm2);
        let mut dy1 = dsum2.clone();
        let (dxq, dxkv) = attn_bwd(&layer.cross_attn, &lc.cross_attn, &dsum2, &mut gl.cross_attn, l, p);
        dy1 += &dxq;
        denc_out += &dxkv;

        let dsum1 = add_norm_bwd(&lc.ln1, &layer.norm1, &dy1, &mut gl.norm1);
        let mut dy0 = dsum1.clone();
        let (dxq, dxkv) = attn_bwd(&layer.self_attn, &lc.self_attn, &dsum1, &mut gl.self_attn, l, p);
        dy0 += &dxq;
        dy0 += &dxkv;
        dy = dy0;
    }
    embed_bwd(&dy, &cache.dec_input, &mut grads.embed_w, &mut grads.embed_b);

    // Encoder stack, reversed.
    let mut dx = denc_out;
    for (layer, gl, lc) in itertools_rev(&model.encoder, &mut grads.encoder, &cache.enc_layers) {
        let dsum2 = add_norm_bwd(&lc.ln2, &layer.norm2, &dx, &mut gl.norm2);
        let mut dx1 = dsum2.clone();
        dx1 += &ff_bwd(&layer.ff, &lc.ff, &dsum2, &mut gl.ff, p);

        let dsum1 = add_norm_bwd(&lc.ln1, &layer.norm1, &dx1, &mut gl.norm1);
        let mut dx0 = dsum1.clone();
        let (dxq, dxkv) = attn_bwd(&layer.attn, &lc.attn, &dsum1, &mut gl.attn, l, p);
        dx0 += &dxq;
        dx0 += &dxkv;
        dx = dx0;
    }
    embed_bwd(&dx, &cache.enc_input, &mut grads.embed_w, &mut grads.embed_b);
}

/// Zip three parallel layer collections in reverse order.
fn itertools_rev<'a, A, B, C>(
    a: &'a [A],
    b: &'a mut [B],
    c: &'a [C],
) -> impl Iterator<Item = (&'a A, &'a mut B, &'a C)> {
    a.iter().rev().zip(b.iter_mut().rev()).zip(c.iter().rev()).map(|((x, y), z)| (x, y, z))
}

fn validate_batch(model: &TransformerModel, batch: &[Window]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("loss needs at least one window".into()));
    }
    for w in batch {
        if w.target.len() != model.config.decoder_len {
            return Err(Error::LengthMismatch {
                left: w.target.len(),
                right: model.config.decoder_len,
            });
        }
        if w.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation {
                stage: "target window".into(),
            });
        }
    }
    Ok(())
}

/// Mean squared error over every decoder position of every window, plus the
/// parameter gradients. `step_seed` switches dropout on; each window's masks
/// are derived from `(step_seed, its id)`, independent of scheduling.
pub(crate) fn batch_loss_and_gradients(
    model: &TransformerModel,
    batch: &[(u64, Window)],
    step_seed: Option<u64>,
) -> Result<(f64, TransformerModel)> {
    let windows: Vec<Window> = batch.iter().map(|(_, w)| *w).collect();
    validate_batch(model, &windows)?;
    let denom = (batch.len() * model.config.decoder_len) as f64;

    let n_chunks = batch.len().div_ceil(CHUNK);
    let partials: Vec<Result<(f64, TransformerModel)>> = ordered_map(n_chunks, |ci| {
        let mut grads = model.zeros_like();
        let mut loss = 0.0;
        for (id, w) in batch.iter().skip(ci * CHUNK).take(CHUNK) {
            let plan = step_seed.map(|seed| DropoutPlan {
                rate: model.config.dropout,
                step_seed: seed,
                window_index: *id,
            });
            let (preds, cache) = forward_cached(model, w.encoder, w.decoder_in, plan, None)?;
            let mut dpreds = Vec::with_capacity(preds.len());
            for (p, t) in preds.iter().zip(w.target) {
                let r = p - t;
                loss += r * r;
                dpreds.push(2.0 * r / denom);
            }
            backward_window(model, &cache, &dpreds, &mut grads);
        }
        Ok((loss, grads))
    });

    let mut total = model.zeros_like();
    let mut loss = 0.0;
    for part in partials {
        let (chunk_loss, chunk_grads) = part?;
        loss += chunk_loss;
        total.add_assign_params(&chunk_grads);
    }
    Ok((loss / denom, total))
}

/// Loss without gradients, for finite-difference probes.
#[cfg(test)]
pub(crate) fn batch_loss(model: &TransformerModel, batch: &[Window]) -> Result<f64> {
    validate_batch(model, batch)?;
    let denom = (batch.len() * model.config.decoder_len) as f64;
    let mut loss = 0.0;
    for w in batch {
        let (preds, _) = forward_cached(model, w.encoder, w.decoder_in, None, None)?;
        for (p, t) in preds.iter().zip(w.target) {
            let r = p - t;
            loss += r * r;
        }
    }
    Ok(loss / denom)
}

/// Public entry: loss and gradients for a batch. Dropout is active whenever
/// the configured rate is positive, with masks seeded from the model seed.
pub fn loss_and_gradients(
    model: &TransformerModel,
    batch: &[Window],
) -> Result<(f64, TransformerModel)> {
    let ids: Vec<(u64, Window)> = batch
        .iter()
        .enumerate()
        .map(|(i, w)| (i as u64, *w))
        .collect();
    let seed = if model.config.dropout > 0.0 {
        Some(derive_seed(model.config.seed, "loss", 0))
    } else {
        None
    };
    batch_loss_and_gradients(model, &ids, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::model::TransformerConfig;

    fn tiny_config() -> TransformerConfig {
        TransformerConfig {
            embed_dim: 8,
            heads: 2,
            stacks: 1,
            ff_dim: 16,
            dropout: 0.0,
            encoder_len: 8,
            decoder_len: 4,
            seed: 17,
            ..Default::default()
        }
    }

    fn sine_windows(count: usize, span: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|w| {
                (0..span)
                    .map(|t| 0.5 + 0.4 * ((w * 3 + t) as f64 * 0.37).sin())
                    .collect()
            })
            .collect()
    }

    fn as_windows(raw: &[Vec<f64>], enc: usize, dec: usize) -> Vec<Window<'_>> {
        raw.iter()
            .map(|r| Window {
                encoder: &r[..enc],
                decoder_in: &r[enc - 1..enc - 1 + dec],
                target: &r[enc..enc + dec],
            })
            .collect()
    }

    #[test]
    fn zero_residual_batch_has_zero_loss_and_gradients() {
        let mut model = TransformerModel::new(tiny_config()).unwrap();
        let zeros = model.zeros_like().flatten_params();
        model.load_flat_params(&zeros).unwrap();
        model.out_b[0] = 0.75;
        let raw = vec![vec![0.75; 12]; 3];
        let batch = as_windows(&raw, 8, 4);
        let (loss, grads) = loss_and_gradients(&model, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flatten_params().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn doubling_residuals_quadruples_the_loss() {
        let mut model = TransformerModel::new(tiny_config()).unwrap();
        let zeros = model.zeros_like().flatten_params();
        model.load_flat_params(&zeros).unwrap();
        // Constant predictor at 0: targets c and 2c give losses c^2 and 4c^2.
        let near: Vec<Vec<f64>> = vec![vec![0.3; 12]; 2];
        let far: Vec<Vec<f64>> = vec![vec![0.6; 12]; 2];
        let l1 = batch_loss(&model, &as_windows(&near, 8, 4)).unwrap();
        let l2 = batch_loss(&model, &as_windows(&far, 8, 4)).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-12);
        assert!((l1 - 0.09).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let model = TransformerModel::new(tiny_config()).unwrap();
        let raw = sine_windows(3, 12);
        let batch = as_windows(&raw, 8, 4);
        let (_, grads) = loss_and_gradients(&model, &batch).unwrap();
        let analytic = grads.flatten_params();

        let base = model.flatten_params();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut probe = model.clone();
            let mut params = base.clone();
            params[i] = base[i] + h;
            probe.load_flat_params(&params).unwrap();
            let up = batch_loss(&probe, &batch).unwrap();
            params[i] = base[i] - h;
            probe.load_flat_params(&params).unwrap();
            let down = batch_loss(&probe, &batch).unwrap();
            let fd = (up - down) / (2.0 * h);
            let diff = (analytic[i] - fd).abs();
            let tol = f64::max(1e-4 * analytic[i].abs().max(fd.abs()), 1e-9);
            assert!(
                diff <= tol,
                "parameter {i}: analytic {} vs finite difference {fd}",
                analytic[i]
            );
            if fd.abs() > 1e-7 {
                worst = worst.max(diff / fd.abs());
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_under_per_position_norm() {
        let mut config = tiny_config();
        config.layernorm_mode = crate::transformer::ops::LayerNormMode::PerPosition;
        config.seed = 29;
        let model = TransformerModel::new(config).unwrap();
        let raw = sine_windows(2, 12);
        let batch = as_windows(&raw, 8, 4);
        let (_, grads) = loss_and_gradients(&model, &batch).unwrap();
        let analytic = grads.flatten_params();

        let base = model.flatten_params();
        let h = 1e-5;
        // Spot-check a deterministic stride across the parameter vector.
        for i in (0..base.len()).step_by(7) {
            let mut probe = model.clone();
            let mut params = base.clone();
            params[i] = base[i] + h;
            probe.load_flat_params(&params).unwrap();
            let up = batch_loss(&probe, &batch).unwrap();
            params[i] = base[i] - h;
            probe.load_flat_params(&params).unwrap();
            let down = batch_loss(&probe, &batch).unwrap();
            let fd = (up - down) / (2.0 * h);
            let diff = (analytic[i] - fd).abs();
            let tol = f64::max(1e-4 * analytic[i].abs().max(fd.abs()), 1e-9);
            assert!(diff <= tol, "parameter {i}: {} vs {fd}", analytic[i]);
        }
    }

    #[test]
    fn dropout_gradients_match_finite_differences_with_frozen_masks() {
        // With a fixed step seed the masks are a deterministic function of
        // the window id, so the loss stays differentiable in the parameters.
        let mut config = tiny_config();
        config.dropout = 0.3;
        let model = TransformerModel::new(config).unwrap();
        let raw = sine_windows(2, 12);
        let windows = as_windows(&raw, 8, 4);
        let ids: Vec<(u64, Window)> = windows.iter().enumerate().map(|(i, w)| (i as u64, *w)).collect();
        let step = Some(99u64);
        let (_, grads) = batch_loss_and_gradients(&model, &ids, step).unwrap();
        let analytic = grads.flatten_params();

        let base = model.flatten_params();
        let h = 1e-5;
        for i in (0..base.len()).step_by(11) {
            let mut probe = model.clone();
            let mut params = base.clone();
            params[i] = base[i] + h;
            probe.load_flat_params(&params).unwrap();
            let (up, _) = batch_loss_and_gradients(&probe, &ids, step).unwrap();
            params[i] = base[i] - h;
            probe.load_flat_params(&params).unwrap();
            let (down, _) = batch_loss_and_gradients(&probe, &ids, step).unwrap();
            let fd = (up - down) / (2.0 * h);
            let diff = (analytic[i] - fd).abs();
            let tol = f64::max(1e-4 * analytic[i].abs().max(fd.abs()), 1e-9);
            assert!(diff <= tol, "parameter {i}: {} vs {fd}", analytic[i]);
        }
    }

    #[test]
    fn rejects_empty_and_malformed_batches() {
        let model = TransformerModel::new(tiny_config()).unwrap();
        assert!(loss_and_gradients(&model, &[]).is_err());
        let raw = vec![vec![0.5; 12]];
        let mut batch = as_windows(&raw, 8, 4);
        batch[0].target = &raw[0][..3];
        assert!(loss_and_gradients(&model, &batch).is_err());
    }
}
