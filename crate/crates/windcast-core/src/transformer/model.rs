//! Model configuration, parameter containers, and initialization.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::ops::{positional_encoding, LayerNormMode};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Hyperparameters of one subseries forecaster. `embed_dim` is the token
/// embedding length, `encoder_len`/`decoder_len` the window sizes in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub stacks: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub encoder_len: usize,
    pub decoder_len: usize,
    pub seed: u64,
    pub layernorm_mode: LayerNormMode,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            heads: 4,
            stacks: 3,
            ff_dim: 64,
            dropout: 0.2,
            learning_rate: 0.001,
            iterations: 10,
            batch_size: 256,
            max_grad_norm: 0.01,
            encoder_len: 48,
            decoder_len: 12,
            seed: 0,
            layernorm_mode: LayerNormMode::PaperGlobal,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return bad(format!("embed_dim must be even and positive, got {}", self.embed_dim));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "heads must divide embed_dim: {} heads, embed_dim {}",
                self.heads, self.embed_dim
            ));
        }
        if self.stacks == 0 {
            return bad("stacks must be at least 1".into());
        }
        if self.ff_dim == 0 {
            return bad("ff_dim must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !self.max_grad_norm.is_finite() || self.max_grad_norm <= 0.0 {
            return bad(format!("max_grad_norm must be > 0, got {}", self.max_grad_norm));
        }
        if self.encoder_len == 0 || self.decoder_len == 0 {
            return bad(format!(
                "window lengths must be positive, got encoder {} decoder {}",
                self.encoder_len, self.decoder_len
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Samples a training window occupies: encoder span plus decoder span
    /// plus the one-step-ahead target overlap.
    pub fn window_span(&self) -> usize {
        self.encoder_len + self.decoder_len
    }

    /// Minimum history needed to forecast the next value.
    pub fn min_history(&self) -> usize {
        self.encoder_len + self.decoder_len - 1
    }
}

/// Learnable scale and shift applied per embedding row after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNormParams {
    fn identity(l: usize) -> Self {
        Self {
            gain: Array1::ones(l),
            bias: Array1::zeros(l),
        }
    }

    fn zeros(l: usize) -> Self {
        Self {
            gain: Array1::zeros(l),
            bias: Array1::zeros(l),
        }
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(self.gain.as_slice().unwrap());
        out.push(self.bias.as_slice().unwrap());
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.gain.as_slice_mut().unwrap());
        out.push(self.bias.as_slice_mut().unwrap());
    }
}

/// One multi-head attention block: per-head query/key/value projections
/// (`head_dim x embed_dim` each) and the output projection `wo`
/// (`embed_dim x embed_dim`, applied without bias).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Vec<Array2<f64>>,
    pub wk: Vec<Array2<f64>>,
    pub wv: Vec<Array2<f64>>,
    pub wo: Array2<f64>,
}

impl AttentionWeights {
    fn init<R: Rng>(l: usize, heads: usize, rng: &mut R) -> Self {
        let dh = l / heads;
        let mk = |rng: &mut R| scaled_uniform(dh, l, rng);
        Self {
            wq: (0..heads).map(|_| mk(rng)).collect(),
            wk: (0..heads).map(|_| mk(rng)).collect(),
            wv: (0..heads).map(|_| mk(rng)).collect(),
            wo: scaled_uniform(l, l, rng),
        }
    }

    fn zeros(l: usize, heads: usize) -> Self {
        let dh = l / heads;
        Self {
            wq: (0..heads).map(|_| Array2::zeros((dh, l))).collect(),
            wk: (0..heads).map(|_| Array2::zeros((dh, l))).collect(),
            wv: (0..heads).map(|_| Array2::zeros((dh, l))).collect(),
            wo: Array2::zeros((l, l)),
        }
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        for m in self.wq.iter().chain(&self.wk).chain(&self.wv) {
            out.push(m.as_slice().unwrap());
        }
        out.push(self.wo.as_slice().unwrap());
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for m in self
            .wq
            .iter_mut()
            .chain(self.wk.iter_mut())
            .chain(self.wv.iter_mut())
        {
            out.push(m.as_slice_mut().unwrap());
        }
        out.push(self.wo.as_slice_mut().unwrap());
    }
}

/// Two-layer position-wise feed-forward block with GELU activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardWeights {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl FeedForwardWeights {
    fn init<R: Rng>(l: usize, ff: usize, rng: &mut R) -> Self {
        Self {
            w1: scaled_uniform(ff, l, rng),
            b1: Array1::zeros(ff),
            w2: scaled_uniform(l, ff, rng),
            b2: Array1::zeros(l),
        }
    }

    fn zeros(l: usize, ff: usize) -> Self {
        Self {
            w1: Array2::zeros((ff, l)),
            b1: Array1::zeros(ff),
            w2: Array2::zeros((l, ff)),
            b2: Array1::zeros(l),
        }
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(self.w1.as_slice().unwrap());
        out.push(self.b1.as_slice().unwrap());
        out.push(self.w2.as_slice().unwrap());
        out.push(self.b2.as_slice().unwrap());
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.w1.as_slice_mut().unwrap());
        out.push(self.b1.as_slice_mut().unwrap());
        out.push(self.w2.as_slice_mut().unwrap());
        out.push(self.b2.as_slice_mut().unwrap());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn: AttentionWeights,
    pub norm1: LayerNormParams,
    pub ff: FeedForwardWeights,
    pub norm2: LayerNormParams,
}

impl EncoderLayer {
    fn collect<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        self.attn.collect(out);
        self.norm1.collect(out);
        self.ff.collect(out);
        self.norm2.collect(out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.attn.collect_mut(out);
        self.norm1.collect_mut(out);
        self.ff.collect_mut(out);
        self.norm2.collect_mut(out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: AttentionWeights,
    pub norm1: LayerNormParams,
    pub cross_attn: AttentionWeights,
    pub norm2: LayerNormParams,
    pub ff: FeedForwardWeights,
    pub norm3: LayerNormParams,
}

impl DecoderLayer {
    fn collect<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        self.self_attn.collect(out);
        self.norm1.collect(out);
        self.cross_attn.collect(out);
        self.norm2.collect(out);
        self.ff.collect(out);
        self.norm3.collect(out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.self_attn.collect_mut(out);
        self.norm1.collect_mut(out);
        self.cross_attn.collect_mut(out);
        self.norm2.collect_mut(out);
        self.ff.collect_mut(out);
        self.norm3.collect_mut(out);
    }
}

/// A trained (or freshly initialized) subseries forecaster. The position
/// table `pe` is deterministic from the configuration and not learned;
/// every other tensor is a parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    /// Row `pos` is the sinusoidal encoding of that position; sized to the
    /// longer of the two windows.
    pub pe: Array2<f64>,
    /// Value embedding: scalar input to `embed_dim` features.
    pub embed_w: Array1<f64>,
    pub embed_b: Array1<f64>,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    /// Scalar read-out per decoder position.
    pub out_w: Array1<f64>,
    /// Single-element tensor so the bias shares the flat-parameter plumbing.
    pub out_b: Array1<f64>,
}

fn scaled_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let scale = 1.0 / (cols as f64).sqrt();
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = rng.gen_range(-scale..scale);
    }
    m
}

impl TransformerModel {
    /// Initialize with scaled uniform weights (`U(-1/sqrt(fan_in), 1/sqrt(fan_in))`),
    /// zero biases, and identity layer norms, all drawn from a stream derived
    /// from `config.seed`.
    pub fn new(config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let l = config.embed_dim;
        let mut rng = rng_from(config.seed, "transformer-init", 0);
        let pe_len = config.encoder_len.max(config.decoder_len);
        let pe = positional_encoding(pe_len, l)?;

        let mut embed_w = Array1::zeros(l);
        for v in embed_w.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let embed_b = Array1::zeros(l);

        let encoder = (0..config.stacks)
            .map(|_| EncoderLayer {
                attn: AttentionWeights::init(l, config.heads, &mut rng),
                norm1: LayerNormParams::identity(l),
                ff: FeedForwardWeights::init(l, config.ff_dim, &mut rng),
                norm2: LayerNormParams::identity(l),
            })
            .collect();
        let decoder = (0..config.stacks)
            .map(|_| DecoderLayer {
                self_attn: AttentionWeights::init(l, config.heads, &mut rng),
                norm1: LayerNormParams::identity(l),
                cross_attn: AttentionWeights::init(l, config.heads, &mut rng),
                norm2: LayerNormParams::identity(l),
                ff: FeedForwardWeights::init(l, config.ff_dim, &mut rng),
                norm3: LayerNormParams::identity(l),
            })
            .collect();

        let out_w = {
            let m = scaled_uniform(1, l, &mut rng);
            Array1::from_iter(m.iter().copied())
        };

        Ok(Self {
            config,
            pe,
            embed_w,
            embed_b,
            encoder,
            decoder,
            out_w,
            out_b: Array1::zeros(1),
        })
    }

    /// Same shapes, every parameter zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let c = &self.config;
        let l = c.embed_dim;
        Self {
            config: c.clone(),
            pe: Array2::zeros((0, 0)),
            embed_w: Array1::zeros(l),
            embed_b: Array1::zeros(l),
            encoder: (0..c.stacks)
                .map(|_| EncoderLayer {
                    attn: AttentionWeights::zeros(l, c.heads),
                    norm1: LayerNormParams::zeros(l),
                    ff: FeedForwardWeights::zeros(l, c.ff_dim),
                    norm2: LayerNormParams::zeros(l),
                })
                .collect(),
            decoder: (0..c.stacks)
                .map(|_| DecoderLayer {
                    self_attn: AttentionWeights::zeros(l, c.heads),
                    norm1: LayerNormParams::zeros(l),
                    cross_attn: AttentionWeights::zeros(l, c.heads),
                    norm2: LayerNormParams::zeros(l),
                    ff: FeedForwardWeights::zeros(l, c.ff_dim),
                    norm3: LayerNormParams::zeros(l),
                })
                .collect(),
            out_w: Array1::zeros(l),
            out_b: Array1::zeros(1),
        }
    }

    /// Every learnable tensor as a flat slice, in a fixed traversal order.
    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        out.push(self.embed_w.as_slice().unwrap());
        out.push(self.embed_b.as_slice().unwrap());
        for layer in &self.encoder {
            layer.collect(&mut out);
        }
        for layer in &self.decoder {
            layer.collect(&mut out);
        }
        out.push(self.out_w.as_slice().unwrap());
        out.push(self.out_b.as_slice().unwrap());
        out
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        out.push(self.embed_w.as_slice_mut().unwrap());
        out.push(self.embed_b.as_slice_mut().unwrap());
        for layer in &mut self.encoder {
            layer.collect_mut(&mut out);
        }
        for layer in &mut self.decoder {
            layer.collect_mut(&mut out);
        }
        out.push(self.out_w.as_slice_mut().unwrap());
        out.push(self.out_b.as_slice_mut().unwrap());
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for s in self.param_slices() {
            flat.extend_from_slice(s);
        }
        flat
    }

    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expect = self.param_count();
        if flat.len() != expect {
            return Err(Error::LengthMismatch {
                left: flat.len(),
                right: expect,
            });
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    /// Elementwise add every parameter of `other` into `self`.
    /// Both sides must share a configuration.
    pub(crate) fn add_assign_params(&mut self, other: &Self) {
        let theirs = other.param_slices();
        for (mine, theirs) in self.param_slices_mut().into_iter().zip(theirs) {
            debug_assert_eq!(mine.len(), theirs.len());
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }
}
