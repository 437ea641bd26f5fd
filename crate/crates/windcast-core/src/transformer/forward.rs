//! Forward pass: embedding, multi-head attention, encoder and decoder
//! stacks, and the scalar read-out. Every intermediate needed by the exact
//! backward pass is cached along the way.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::model::{AttentionWeights, FeedForwardWeights, TransformerModel};
use super::ops::{
    gelu, layer_norm_fwd, softmax_columns_masked, LayerNormMode, LnCache, LN_EPS,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// One training example: encoder window, teacher-forced decoder input
/// (target shifted back by one step), and the target window.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub encoder: &'a [f64],
    pub decoder_in: &'a [f64],
    pub target: &'a [f64],
}

/// Attention weights and normalization statistics recorded during a forward
/// pass. `sw` matrices are post-softmax (before dropout), indexed
/// `[layer][head]`; norm entries appear in application order.
#[derive(Debug, Clone, Default)]
pub struct AttentionTrace {
    pub encoder_self: Vec<Vec<Array2<f64>>>,
    pub decoder_self: Vec<Vec<Array2<f64>>>,
    pub decoder_cross: Vec<Vec<Array2<f64>>>,
    /// Mean, variance, and normalized block per layer-norm application.
    pub norms: Vec<NormRecord>,
}

#[derive(Debug, Clone)]
pub struct NormRecord {
    /// One entry in global mode, one per position otherwise.
    pub eta: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub normalized: Array2<f64>,
}

/// Per-window dropout context. Masks are drawn from a stream derived from
/// `(step_seed, window_index)`, so a batch yields identical masks regardless
/// of how its windows are scheduled across threads.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DropoutPlan {
    pub rate: f64,
    pub step_seed: u64,
    pub window_index: u64,
}

pub(crate) struct AttnCache {
    pub x_q: Array2<f64>,
    pub x_kv: Array2<f64>,
    pub q: Vec<Array2<f64>>,
    pub k: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// Post-softmax weights, before dropout.
    pub sw: Vec<Array2<f64>>,
    /// Dropout keep masks (1.0 = kept), one per head; `None` when inactive.
    pub keep: Option<Vec<Array2<f64>>>,
    /// Stacked head outputs fed to the output projection.
    pub concat: Array2<f64>,
}

pub(crate) struct FfCache {
    pub x: Array2<f64>,
    pub u: Array2<f64>,
    /// Activations after GELU and dropout, as consumed by the second layer.
    pub a: Array2<f64>,
    pub keep: Option<Array2<f64>>,
}

pub(crate) struct EncLayerCache {
    pub attn: AttnCache,
    pub ln1: LnCache,
    pub ff: FfCache,
    pub ln2: LnCache,
}

pub(crate) struct DecLayerCache {
    pub self_attn: AttnCache,
    pub ln1: LnCache,
    pub cross_attn: AttnCache,
    pub ln2: LnCache,
    pub ff: FfCache,
    pub ln3: LnCache,
}

pub(crate) struct ForwardCache {
    pub enc_input: Vec<f64>,
    pub dec_input: Vec<f64>,
    pub enc_layers: Vec<EncLayerCache>,
    pub dec_layers: Vec<DecLayerCache>,
    pub enc_out: Array2<f64>,
    pub dec_out: Array2<f64>,
}

/// Embed a window of scalars: column `t` is `embed_w * x_t + embed_b + PE[t]`.
pub fn embed(model: &TransformerModel, window: &[f64]) -> Result<Array2<f64>> {
    let l = model.config.embed_dim;
    if window.is_empty() {
        return Err(Error::InvalidParameter("cannot embed an empty window".into()));
    }
    if window.len() > model.pe.nrows() {
        return Err(Error::InvalidParameter(format!(
            "window of {} positions exceeds the position table ({} rows)",
            window.len(),
            model.pe.nrows()
        )));
    }
    let mut x = Array2::zeros((l, window.len()));
    for (t, &value) in window.iter().enumerate() {
        for r in 0..l {
            x[[r, t]] = model.embed_w[r] * value + model.embed_b[r] + model.pe[[t, r]];
        }
    }
    Ok(x)
}

fn dropout_mask<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            1.0
        }
    })
}

/// Multi-head attention with caching. Queries come from `x_q`; keys and
/// values from `x_kv` (the same matrix for self-attention).
fn multi_head_fwd<R: Rng>(
    weights: &AttentionWeights,
    x_q: &Array2<f64>,
    x_kv: &Array2<f64>,
    causal: bool,
    l: usize,
    dropout: Option<(f64, &mut R)>,
) -> (Array2<f64>, AttnCache) {
    let heads = weights.wq.len();
    let dh = weights.wq[0].nrows();
    let tq = x_q.ncols();
    let scale = 1.0 / (l as f64).sqrt();

    let mut q = Vec::with_capacity(heads);
    let mut k = Vec::with_capacity(heads);
    let mut v = Vec::with_capacity(heads);
    let mut sw = Vec::with_capacity(heads);
    let mut keep: Option<Vec<Array2<f64>>> = None;
    let mut concat = Array2::zeros((heads * dh, tq));

    let mut dropout = dropout;
    for h in 0..heads {
        let qh = weights.wq[h].dot(x_q);
        let kh = weights.wk[h].dot(x_kv);
        let vh = weights.wv[h].dot(x_kv);
        let z = kh.t().dot(&qh) * scale;
        let swh = softmax_columns_masked(&z, causal);
        let used = match &mut dropout {
            Some((rate, rng)) => {
                let mask = dropout_mask(swh.nrows(), swh.ncols(), *rate, *rng);
                let used = &(&swh * &mask) / (1.0 - *rate);
                keep.get_or_insert_with(Vec::new).push(mask);
                used
            }
            None => swh.clone(),
        };
        let oh = vh.dot(&used);
        concat
            .slice_mut(ndarray::s![h * dh..(h + 1) * dh, ..])
            .assign(&oh);
        q.push(qh);
        k.push(kh);
        v.push(vh);
        sw.push(swh);
    }
    let out = weights.wo.dot(&concat);
    let cache = AttnCache {
        x_q: x_q.clone(),
        x_kv: x_kv.clone(),
        q,
        k,
        v,
        sw,
        keep,
        concat,
    };
    (out, cache)
}

/// Public multi-head self-attention: project `x` through every head, run
/// scaled attention per head, stack the head outputs, and apply the output
/// projection (no bias). No mask, no dropout.
pub fn multi_head(
    x: &Array2<f64>,
    weights: &AttentionWeights,
    l: usize,
) -> Result<Array2<f64>> {
    if weights.wq.is_empty() {
        return Err(Error::InvalidParameter("attention needs at least one head".into()));
    }
    if weights.wq[0].ncols() != x.nrows() {
        return Err(Error::InvalidParameter(format!(
            "projection expects {} rows, input has {}",
            weights.wq[0].ncols(),
            x.nrows()
        )));
    }
    let (out, _) = multi_head_fwd::<rand_chacha::ChaCha8Rng>(weights, x, x, false, l, None);
    Ok(out)
}

fn ff_fwd<R: Rng>(
    weights: &FeedForwardWeights,
    x: &Array2<f64>,
    dropout: Option<(f64, &mut R)>,
) -> (Array2<f64>, FfCache) {
    let mut u = weights.w1.dot(x);
    u += &weights.b1.view().insert_axis(Axis(1));
    let mut a = u.mapv(gelu);
    let keep = match dropout {
        Some((rate, rng)) => {
            let mask = dropout_mask(a.nrows(), a.ncols(), rate, rng);
            a = &(&a * &mask) / (1.0 - rate);
            Some(mask)
        }
        None => None,
    };
    let mut y = weights.w2.dot(&a);
    y += &weights.b2.view().insert_axis(Axis(1));
    let cache = FfCache {
        x: x.clone(),
        u,
        a,
        keep,
    };
    (y, cache)
}

/// Residual add, normalize, then apply the learnable row-wise gain and bias.
fn add_norm(
    x: &Array2<f64>,
    sublayer: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
    mode: LayerNormMode,
) -> (Array2<f64>, LnCache) {
    let sum = x + sublayer;
    let (xhat, cache) = layer_norm_fwd(&sum, mode, LN_EPS);
    let mut y = xhat;
    for ((r, _), v) in y.indexed_iter_mut() {
        *v = gain[r] * *v + bias[r];
    }
    (y, cache)
}

fn check_finite(x: &Array2<f64>, stage: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation {
            stage: stage.to_string(),
        })
    }
}

fn record_norm(trace: &mut Option<&mut AttentionTrace>, cache: &LnCache) {
    if let Some(trace) = trace {
        trace.norms.push(NormRecord {
            eta: cache.eta.clone(),
            sigma2: cache.sigma2.clone(),
            normalized: cache.xhat.clone(),
        });
    }
}

/// Run the full encoder-decoder pass. Returns one prediction per decoder
/// position. Dropout masks are drawn only when `dropout` is set.
pub(crate) fn forward_cached(
    model: &TransformerModel,
    enc_window: &[f64],
    dec_window: &[f64],
    dropout: Option<DropoutPlan>,
    mut trace: Option<&mut AttentionTrace>,
) -> Result<(Vec<f64>, ForwardCache)> {
    let c = &model.config;
    if enc_window.len() != c.encoder_len {
        return Err(Error::LengthMismatch {
            left: enc_window.len(),
            right: c.encoder_len,
        });
    }
    if dec_window.len() != c.decoder_len {
        return Err(Error::LengthMismatch {
            left: dec_window.len(),
            right: c.decoder_len,
        });
    }
    for &v in enc_window.iter().chain(dec_window) {
        if !v.is_finite() {
            return Err(Error::NonFiniteActivation {
                stage: "input window".into(),
            });
        }
    }

    let mut rng = dropout.map(|p| {
        (
            p.rate,
            rng_from(derive_seed(p.step_seed, "dropout", p.window_index), "masks", 0),
        )
    });
    let l = c.embed_dim;
    let mode = c.layernorm_mode;

    // Encoder stack.
    let mut x = embed(model, enc_window)?;
    let mut enc_layers = Vec::with_capacity(c.stacks);
    for (i, layer) in model.encoder.iter().enumerate() {
        let (attn_out, attn_cache) = multi_head_fwd(
            &layer.attn,
            &x,
            &x,
            false,
            l,
            rng.as_mut().map(|(r, g)| (*r, g)),
        );
        if let Some(trace) = trace.as_deref_mut() {
            trace.encoder_self.push(attn_cache.sw.clone());
        }
        let (x1, ln1) = add_norm(&x, &attn_out, &layer.norm1.gain, &layer.norm1.bias, mode);
        record_norm(&mut trace, &ln1);
        let (ff_out, ff_cache) =
            ff_fwd(&layer.ff, &x1, rng.as_mut().map(|(r, g)| (*r, g)));
        let (x2, ln2) = add_norm(&x1, &ff_out, &layer.norm2.gain, &layer.norm2.bias, mode);
        record_norm(&mut trace, &ln2);
        check_finite(&x2, &format!("encoder layer {i}"))?;
        enc_layers.push(EncLayerCache {
            attn: attn_cache,
            ln1,
            ff: ff_cache,
            ln2,
        });
        x = x2;
    }
    let enc_out = x;

    // Decoder stack.
    let mut y = embed(model, dec_window)?;
    let mut dec_layers = Vec::with_capacity(c.stacks);
    for (i, layer) in model.decoder.iter().enumerate() {
        let (self_out, self_cache) = multi_head_fwd(
            &layer.self_attn,
            &y,
            &y,
            true,
            l,
            rng.as_mut().map(|(r, g)| (*r, g)),
        );
        if let Some(trace) = trace.as_deref_mut() {
            trace.decoder_self.push(self_cache.sw.clone());
        }
        let (y1, ln1) = add_norm(&y, &self_out, &layer.norm1.gain, &layer.norm1.bias, mode);
        record_norm(&mut trace, &ln1);

        let (cross_out, cross_cache) = multi_head_fwd(
            &layer.cross_attn,
            &y1,
            &enc_out,
            false,
            l,
            rng.as_mut().map(|(r, g)| (*r, g)),
        );
        if let Some(trace) = trace.as_deref_mut() {
            trace.decoder_cross.push(cross_cache.sw.clone());
        }
        let (y2, ln2) = add_norm(&y1, &cross_out, &layer.norm2.gain, &layer.norm2.bias, mode);
        record_norm(&mut trace, &ln2);

        let (ff_out, ff_cache) =
            ff_fwd(&layer.ff, &y2, rng.as_mut().map(|(r, g)| (*r, g)));
        let (y3, ln3) = add_norm(&y2, &ff_out, &layer.norm3.gain, &layer.norm3.bias, mode);
        record_norm(&mut trace, &ln3);
        check_finite(&y3, &format!("decoder layer {i}"))?;
        dec_layers.push(DecLayerCache {
            self_attn: self_cache,
            ln1,
            cross_attn: cross_cache,
            ln2,
            ff: ff_cache,
            ln3,
        });
        y = y3;
    }
    let dec_out = y;

    let mut preds = Vec::with_capacity(c.decoder_len);
    for t in 0..c.decoder_len {
        let mut acc = model.out_b[0];
        for r in 0..l {
            acc += model.out_w[r] * dec_out[[r, t]];
        }
        if !acc.is_finite() {
            return Err(Error::NonFiniteActivation {
                stage: "output projection".into(),
            });
        }
        preds.push(acc);
    }

    let cache = ForwardCache {
        enc_input: enc_window.to_vec(),
        dec_input: dec_window.to_vec(),
        enc_layers,
        dec_layers,
        enc_out,
        dec_out,
    };
    Ok((preds, cache))
}

/// Run the model on one window pair. With `train_mode` set, dropout is
/// applied using masks seeded from the model configuration, so repeated
/// calls still agree bit for bit.
pub fn forward(
    model: &TransformerModel,
    enc_window: &[f64],
    dec_window: &[f64],
    train_mode: bool,
) -> Result<(Vec<f64>, AttentionTrace)> {
    let plan = if train_mode && model.config.dropout > 0.0 {
        Some(DropoutPlan {
            rate: model.config.dropout,
            step_seed: derive_seed(model.config.seed, "forward", 0),
            window_index: 0,
        })
    } else {
        None
    };
    let mut trace = AttentionTrace::default();
    let (preds, _) = forward_cached(model, enc_window, dec_window, plan, Some(&mut trace))?;
    Ok((preds, trace))
}
