//! Stateless tensor operations shared by the forward and backward passes.
//!
//! Matrices follow the column-token convention: a sequence of T tokens with
//! embedding length `l` is an `l x T` matrix, one column per position.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Normalization statistics scope inside a layer-norm application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerNormMode {
    /// One mean/variance pair over the entire `l x T` block.
    PaperGlobal,
    /// Independent statistics per column (per token position).
    PerPosition,
}

/// Epsilon used by model-internal layer norms.
pub(crate) const LN_EPS: f64 = 1e-6;

/// Sinusoidal position table. Row `pos` holds the encoding of that position:
/// `PE[pos, 2i] = sin(pos / 10000^(2i/l))`, `PE[pos, 2i+1] = cos(pos / 10000^(2i/l))`.
pub fn positional_encoding(length: usize, l: usize) -> Result<Array2<f64>> {
    if length == 0 {
        return Err(Error::InvalidParameter(
            "positional encoding length must be at least 1".into(),
        ));
    }
    if l == 0 || !l.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "embedding length must be even and positive, got {l}"
        )));
    }
    Ok(Array2::from_shape_fn((length, l), |(pos, d)| {
        let pair = (d / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / l as f64);
        if d % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Gaussian error linear unit, tanh form.
pub fn gelu(u: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * u * (1.0 + (C * (u + 0.044715 * u * u * u)).tanh())
}

/// Derivative of [`gelu`].
pub(crate) fn gelu_prime(u: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let w = C * (u + 0.044715 * u * u * u);
    let t = w.tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * u * u)
}

/// Saved state from a layer-norm forward pass, enough to run the exact
/// backward pass without revisiting the input.
#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    /// `1/sqrt(sigma^2 + eps)`; one entry for global mode, one per column otherwise.
    pub inv: Vec<f64>,
    pub eta: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub mode: LayerNormMode,
}

/// Normalize a block to zero mean and unit variance (population statistics).
/// This is the bare operation; learnable gain and bias live in the model.
pub fn layer_norm(x: &Array2<f64>, mode: LayerNormMode, eps: f64) -> Array2<f64> {
    layer_norm_fwd(x, mode, eps).0
}

pub(crate) fn layer_norm_fwd(
    x: &Array2<f64>,
    mode: LayerNormMode,
    eps: f64,
) -> (Array2<f64>, LnCache) {
    match mode {
        LayerNormMode::PaperGlobal => {
            let n = x.len() as f64;
            let eta = x.sum() / n;
            let sigma2 = x.iter().map(|&v| (v - eta) * (v - eta)).sum::<f64>() / n;
            let inv = 1.0 / (sigma2 + eps).sqrt();
            let xhat = x.mapv(|v| (v - eta) * inv);
            let cache = LnCache {
                xhat: xhat.clone(),
                inv: vec![inv],
                eta: vec![eta],
                sigma2: vec![sigma2],
                mode,
            };
            (xhat, cache)
        }
        LayerNormMode::PerPosition => {
            let (rows, cols) = x.dim();
            let n = rows as f64;
            let mut xhat = x.clone();
            let mut invs = Vec::with_capacity(cols);
            let mut etas = Vec::with_capacity(cols);
            let mut sigmas = Vec::with_capacity(cols);
            for j in 0..cols {
                let col = x.column(j);
                let eta = col.sum() / n;
                let sigma2 = col.iter().map(|&v| (v - eta) * (v - eta)).sum::<f64>() / n;
                let inv = 1.0 / (sigma2 + eps).sqrt();
                for i in 0..rows {
                    xhat[[i, j]] = (x[[i, j]] - eta) * inv;
                }
                invs.push(inv);
                etas.push(eta);
                sigmas.push(sigma2);
            }
            let cache = LnCache {
                xhat: xhat.clone(),
                inv: invs,
                eta: etas,
                sigma2: sigmas,
                mode,
            };
            (xhat, cache)
        }
    }
}

/// Exact gradient of the normalization: given `d xhat`, produce `d x`.
pub(crate) fn layer_norm_bwd(cache: &LnCache, dxhat: &Array2<f64>) -> Array2<f64> {
    match cache.mode {
        LayerNormMode::PaperGlobal => {
            let n = dxhat.len() as f64;
            let inv = cache.inv[0];
            let mean_d = dxhat.sum() / n;
            let mean_dx = dxhat
                .iter()
                .zip(cache.xhat.iter())
                .map(|(&d, &h)| d * h)
                .sum::<f64>()
                / n;
            let mut dx = dxhat.clone();
            dx.zip_mut_with(&cache.xhat, |d, &h| *d = inv * (*d - mean_d - h * mean_dx));
            dx
        }
        LayerNormMode::PerPosition => {
            let (rows, cols) = dxhat.dim();
            let n = rows as f64;
            let mut dx = Array2::zeros((rows, cols));
            for j in 0..cols {
                let inv = cache.inv[j];
                let mut mean_d = 0.0;
                let mut mean_dx = 0.0;
                for i in 0..rows {
                    mean_d += dxhat[[i, j]];
                    mean_dx += dxhat[[i, j]] * cache.xhat[[i, j]];
                }
                mean_d /= n;
                mean_dx /= n;
                for i in 0..rows {
                    dx[[i, j]] =
                        inv * (dxhat[[i, j]] - mean_d - cache.xhat[[i, j]] * mean_dx);
                }
            }
            dx
        }
    }
}

/// Column-wise softmax with an optional causal mask. Under the mask, column
/// `j` distributes weight only over rows `0..=j`; masked entries are exactly
/// zero. Each retained column sums to 1.
pub(crate) fn softmax_columns_masked(z: &Array2<f64>, causal: bool) -> Array2<f64> {
    let (rows, cols) = z.dim();
    let mut out = Array2::zeros((rows, cols));
    for j in 0..cols {
        let limit = if causal { j.min(rows - 1) } else { rows - 1 };
        let mut mx = f64::NEG_INFINITY;
        for i in 0..=limit {
            mx = mx.max(z[[i, j]]);
        }
        let mut sum = 0.0;
        for i in 0..=limit {
            let e = (z[[i, j]] - mx).exp();
            out[[i, j]] = e;
            sum += e;
        }
        for i in 0..=limit {
            out[[i, j]] /= sum;
        }
    }
    out
}

/// Jacobian-vector product of the column softmax: `dz = sw .* (dsw - <sw, dsw>_col)`.
/// Masked entries carry `sw = 0` and therefore contribute nothing.
pub(crate) fn softmax_columns_bwd(sw: &Array2<f64>, dsw: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = sw.dim();
    let mut dz = Array2::zeros((rows, cols));
    for j in 0..cols {
        let mut dot = 0.0;
        for i in 0..rows {
            dot += sw[[i, j]] * dsw[[i, j]];
        }
        for i in 0..rows {
            dz[[i, j]] = sw[[i, j]] * (dsw[[i, j]] - dot);
        }
    }
    dz
}

/// Single-head scaled dot-product attention in the column convention.
///
/// `q`, `k` are `d x Tq` and `d x Tk`; `v` is `dv x Tk`. The score matrix is
/// `Z = K^T Q / sqrt(l)` (keys index rows, queries index columns), attention
/// weights are the column softmax of `Z`, and the output is `V . SW`.
/// A causal mask requires a square score matrix.
pub fn scaled_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    causal: bool,
    l: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if q.nrows() != k.nrows() {
        return Err(Error::InvalidParameter(format!(
            "query/key depth mismatch: {} vs {}",
            q.nrows(),
            k.nrows()
        )));
    }
    if v.ncols() != k.ncols() {
        return Err(Error::InvalidParameter(format!(
            "value/key length mismatch: {} vs {}",
            v.ncols(),
            k.ncols()
        )));
    }
    if causal && k.ncols() != q.ncols() {
        return Err(Error::InvalidParameter(
            "causal attention needs equally many keys and queries".into(),
        ));
    }
    if l == 0 {
        return Err(Error::InvalidParameter(
            "attention scale length must be positive".into(),
        ));
    }
    let scale = 1.0 / (l as f64).sqrt();
    let z = k.t().dot(q) * scale;
    let sw = softmax_columns_masked(&z, causal);
    let o = v.dot(&sw);
    Ok((o, sw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn positional_encoding_first_row_alternates_zero_one() {
        let pe = positional_encoding(5, 8).unwrap();
        for d in 0..8 {
            let expect = if d % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe[[0, d]], expect);
        }
    }

    #[test]
    fn positional_encoding_matches_hand_value() {
        // Dimension 0 of position 1 is sin(1/10000^0) = sin(1).
        let pe = positional_encoding(4, 6).unwrap();
        assert_abs_diff_eq!(pe[[1, 0]], 0.8414709848078965, epsilon = 1e-12);
        assert_abs_diff_eq!(pe[[1, 1]], 1f64.cos(), epsilon = 1e-12);
        // Dimension pair 1 uses angle pos / 10000^(2/6).
        let angle = 2.0 / 10000f64.powf(2.0 / 6.0);
        assert_abs_diff_eq!(pe[[2, 2]], angle.sin(), epsilon = 1e-12);
    }

    #[test]
    fn positional_encoding_entries_bounded() {
        let pe = positional_encoding(300, 16).unwrap();
        assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn positional_encoding_rejects_odd_length() {
        assert!(positional_encoding(10, 7).is_err());
        assert!(positional_encoding(0, 8).is_err());
    }

    #[test]
    fn layer_norm_constant_block_is_zero() {
        let x = Array2::from_elem((3, 4), 5.0);
        let y = layer_norm(&x, LayerNormMode::PaperGlobal, 1e-6);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn layer_norm_global_two_by_two() {
        let x = array![[1.0, 3.0], [1.0, 3.0]];
        let y = layer_norm(&x, LayerNormMode::PaperGlobal, 0.0);
        assert_abs_diff_eq!(y[[0, 0]], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[[0, 1]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[[1, 0]], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[[1, 1]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn layer_norm_per_position_normalizes_each_column() {
        let x = array![[1.0, 10.0], [2.0, 20.0], [3.0, 60.0]];
        let y = layer_norm(&x, LayerNormMode::PerPosition, 1e-12);
        for j in 0..2 {
            let col = y.column(j);
            let mean = col.sum() / 3.0;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn softmax_constant_scores_spread_uniformly() {
        let z = Array2::from_elem((5, 5), 0.3);
        let sw = softmax_columns_masked(&z, false);
        assert!(sw.iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn causal_first_column_is_unit_vector() {
        let z = Array2::from_shape_fn((4, 4), |(i, j)| (i * 7 + j) as f64 * 0.1);
        let sw = softmax_columns_masked(&z, true);
        assert_eq!(sw[[0, 0]], 1.0);
        for i in 1..4 {
            assert_eq!(sw[[i, 0]], 0.0);
        }
        // Strict upper triangle is masked out entirely.
        for j in 0..4 {
            for i in (j + 1)..4 {
                assert_eq!(sw[[i, j]], 0.0);
            }
            let col_sum: f64 = sw.column(j).sum();
            assert_abs_diff_eq!(col_sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn scaled_attention_matches_naive_oracle() {
        // Dense re-implementation with explicit loops, no shared helpers.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let d = 3;
        let t = 6;
        let q = Array2::from_shape_fn((d, t), |_| next());
        let k = Array2::from_shape_fn((d, t), |_| next());
        let v = Array2::from_shape_fn((d, t), |_| next());
        let l = 12;

        let (o, sw) = scaled_attention(&q, &k, &v, false, l).unwrap();

        let scale = 1.0 / (l as f64).sqrt();
        let mut z = vec![vec![0.0; t]; t];
        for key in 0..t {
            for query in 0..t {
                let mut acc = 0.0;
                for r in 0..d {
                    acc += k[[r, key]] * q[[r, query]];
                }
                z[key][query] = acc * scale;
            }
        }
        let mut w = vec![vec![0.0; t]; t];
        for query in 0..t {
            let mut denom = 0.0;
            for key in 0..t {
                denom += z[key][query].exp();
            }
            for key in 0..t {
                w[key][query] = z[key][query].exp() / denom;
            }
        }
        for key in 0..t {
            for query in 0..t {
                assert_abs_diff_eq!(sw[[key, query]], w[key][query], epsilon = 1e-12);
            }
        }
        for r in 0..d {
            for query in 0..t {
                let mut acc = 0.0;
                for key in 0..t {
                    acc += v[[r, key]] * w[key][query];
                }
                assert_abs_diff_eq!(o[[r, query]], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn scaled_attention_rejects_shape_mismatch() {
        let q = Array2::zeros((3, 4));
        let k = Array2::zeros((2, 4));
        let v = Array2::zeros((3, 4));
        assert!(scaled_attention(&q, &k, &v, false, 8).is_err());

        let k = Array2::zeros((3, 5));
        assert!(scaled_attention(&q, &k, &v, false, 8).is_err());
        // Causal mask needs a square score matrix.
        let k = Array2::zeros((3, 6));
        let v = Array2::zeros((3, 6));
        assert!(scaled_attention(&q, &k, &v, true, 8).is_err());
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let z = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 * 0.7 - j as f64 * 0.4).sin());
        let dsw = Array2::from_shape_fn((4, 3), |(i, j)| ((i + 2 * j) as f64 * 0.3).cos());
        let sw = softmax_columns_masked(&z, false);
        let dz = softmax_columns_bwd(&sw, &dsw);

        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut zp = z.clone();
                zp[[i, j]] += h;
                let mut zm = z.clone();
                zm[[i, j]] -= h;
                let fp: f64 = softmax_columns_masked(&zp, false)
                    .iter()
                    .zip(dsw.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let fm: f64 = softmax_columns_masked(&zm, false)
                    .iter()
                    .zip(dsw.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let fd = (fp - fm) / (2.0 * h);
                assert_abs_diff_eq!(dz[[i, j]], fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn gelu_prime_matches_finite_differences() {
        let h = 1e-6;
        for &u in &[-3.0, -1.2, -0.3, 0.0, 0.4, 1.7, 4.0] {
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_prime(u), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        for mode in [LayerNormMode::PaperGlobal, LayerNormMode::PerPosition] {
            let x = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
            let dy = Array2::from_shape_fn((3, 4), |(i, j)| ((i + j * 3) as f64 * 0.21).cos());
            let (_, cache) = layer_norm_fwd(&x, mode, 1e-6);
            let dx = layer_norm_bwd(&cache, &dy);

            let h = 1e-6;
            for i in 0..3 {
                for j in 0..4 {
                    let mut xp = x.clone();
                    xp[[i, j]] += h;
                    let mut xm = x.clone();
                    xm[[i, j]] -= h;
                    let fp: f64 = layer_norm(&xp, mode, 1e-6)
                        .iter()
                        .zip(dy.iter())
                        .map(|(a, b)| a * b)
                        .sum();
                    let fm: f64 = layer_norm(&xm, mode, 1e-6)
                        .iter()
                        .zip(dy.iter())
                        .map(|(a, b)| a * b)
                        .sum();
                    let fd = (fp - fm) / (2.0 * h);
                    assert_abs_diff_eq!(dx[[i, j]], fd, epsilon = 1e-6);
                }
            }
        }
    }
}
