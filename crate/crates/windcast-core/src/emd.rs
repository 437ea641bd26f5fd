//! Empirical mode decomposition: extrema detection, spline envelopes,
//! sifting, and sequential mode extraction.

use crate::error::{Error, Result};

/// Interior extrema of a signal, maxima and minima separately.
///
/// A plateau (run of equal values) counts as one extremum at the center of
/// the run, and only when the signal drops (or rises) on both sides. Runs
/// touching the first or last sample are not extrema. Indices are strictly
/// increasing. Signals shorter than 3 samples have none.
pub fn find_extrema(signal: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let n = signal.len();
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    if n < 3 {
        return (maxima, minima);
    }
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && signal[j + 1] == signal[i] {
            j += 1;
        }
        if i > 0 && j + 1 < n {
            let v = signal[i];
            let prev = signal[i - 1];
            let next = signal[j + 1];
            let center = (i + j) / 2;
            if prev < v && next < v {
                maxima.push(center);
            } else if prev > v && next > v {
                minima.push(center);
            }
        }
        i = j + 1;
    }
    (maxima, minima)
}

/// Sign changes between consecutive nonzero samples.
pub fn zero_crossings(xs: &[f64]) -> usize {
    let mut count = 0;
    let mut last = 0.0f64;
    for &x in xs {
        if x == 0.0 {
            continue;
        }
        let s = x.signum();
        if last != 0.0 && s != last {
            count += 1;
        }
        last = s;
    }
    count
}

/// Natural cubic spline through strictly increasing knots.
struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    m2: Vec<f64>,
}

impl CubicSpline {
    fn fit(xs: Vec<f64>, ys: Vec<f64>) -> CubicSpline {
        debug_assert!(xs.windows(2).all(|w| w[0] < w[1]), "knots must increase");
        let k = xs.len();
        let mut m2 = vec![0.0; k];
        if k > 2 {
            // Thomas solve for the interior second derivatives.
            let n = k - 2;
            let mut diag = vec![0.0; n];
            let mut upper = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = (h0 + h1) / 3.0;
                upper[i] = h1 / 6.0;
                rhs[i] = (ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0;
            }
            for i in 1..n {
                let lower = (xs[i + 1] - xs[i]) / 6.0;
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m2[n] = rhs[n - 1] / diag[n - 1];
            for i in (0..n - 1).rev() {
                m2[i + 1] = (rhs[i] - upper[i] * m2[i + 2]) / diag[i];
            }
        }
        CubicSpline { xs, ys, m2 }
    }

    fn eval_segment(&self, s: usize, x: f64) -> f64 {
        let h = self.xs[s + 1] - self.xs[s];
        let a = (self.xs[s + 1] - x) / h;
        let b = (x - self.xs[s]) / h;
        a * self.ys[s]
            + b * self.ys[s + 1]
            + ((a * a * a - a) * self.m2[s] + (b * b * b - b) * self.m2[s + 1]) * h * h / 6.0
    }

    /// Evaluates at positions 0, 1, .., n-1 with a forward cursor.
    ///
    /// Positions outside the knot range extrapolate linearly with the end
    /// slope (the natural end condition has zero curvature there).
    fn eval_grid(&self, n: usize) -> Vec<f64> {
        let k = self.xs.len();
        let mut out = Vec::with_capacity(n);
        let mut seg = 0usize;
        for i in 0..n {
            let x = i as f64;
            if x < self.xs[0] {
                let h = self.xs[1] - self.xs[0];
                let slope = (self.ys[1] - self.ys[0]) / h - h * self.m2[1] / 6.0;
                out.push(self.ys[0] + slope * (x - self.xs[0]));
                continue;
            }
            if x > self.xs[k - 1] {
                let h = self.xs[k - 1] - self.xs[k - 2];
                let slope = (self.ys[k - 1] - self.ys[k - 2]) / h + h * self.m2[k - 2] / 6.0;
                out.push(self.ys[k - 1] + slope * (x - self.xs[k - 1]));
                continue;
            }
            while seg + 2 < k && x > self.xs[seg + 1] {
                seg += 1;
            }
            out.push(self.eval_segment(seg, x));
        }
        out
    }
}

/// Natural cubic spline envelope through the given knot samples.
///
/// Boundary rule: the two knots nearest each end are mirrored across that
/// end, positions reflected and values kept, so the envelope continues at
/// extremum height instead of sagging toward the signal edge. An end that
/// already carries a knot is pinned there and gets no mirrors; in particular
/// a spline through endpoint knots of a linear signal is that line exactly.
pub fn spline_envelope(signal: &[f64], knots: &[usize]) -> Result<Vec<f64>> {
    if knots.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "envelope needs at least 2 knots, got {}",
            knots.len()
        )));
    }
    let n = signal.len();
    let last = n - 1;

    let mut xs: Vec<f64> = Vec::with_capacity(knots.len() + 4);
    let mut ys: Vec<f64> = Vec::with_capacity(knots.len() + 4);
    if knots[0] > 0 {
        let mut left: Vec<(f64, f64)> = knots
            .iter()
            .take(2)
            .map(|&k| (-(k as f64), signal[k]))
            .collect();
        left.reverse();
        for (x, y) in left {
            xs.push(x);
            ys.push(y);
        }
    }
    for &k in knots {
        xs.push(k as f64);
        ys.push(signal[k]);
    }
    if knots[knots.len() - 1] < last {
        for (x, y) in knots
            .iter()
            .rev()
            .take(2)
            .map(|&k| (2.0 * last as f64 - k as f64, signal[k]))
        {
            xs.push(x);
            ys.push(y);
        }
    }

    Ok(CubicSpline::fit(xs, ys).eval_grid(n))
}

/// Mean of the upper and lower spline envelopes.
///
/// A signal with fewer than 2 maxima or fewer than 2 minima cannot carry an
/// oscillation, so it is its own local mean.
pub fn local_mean(signal: &[f64]) -> Vec<f64> {
    let (maxima, minima) = find_extrema(signal);
    local_mean_with_extrema(signal, &maxima, &minima)
}

fn local_mean_with_extrema(signal: &[f64], maxima: &[usize], minima: &[usize]) -> Vec<f64> {
    if maxima.len() < 2 || minima.len() < 2 {
        return signal.to_vec();
    }
    let upper = spline_envelope(signal, maxima).expect("checked knot count");
    let lower = spline_envelope(signal, minima).expect("checked knot count");
    upper
        .iter()
        .zip(&lower)
        .map(|(u, l)| 0.5 * (u + l))
        .collect()
}

/// Sift iteration budget and stopping tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiftParams {
    pub max_iters: usize,
    /// Stop when the normalized squared change drops below this.
    pub tolerance: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            max_iters: 1000,
            tolerance: 1e-8,
        }
    }
}

/// Extracts one mode by repeated local-mean subtraction.
///
/// Stops on the iteration budget, on the Cauchy criterion
/// sum((h_prev - h)^2) / sum(h_prev^2) < tolerance, or when the signal runs
/// out of extrema to envelope (a monotonic signal is returned unchanged).
pub fn sift(signal: &[f64], params: &SiftParams) -> Vec<f64> {
    sift_with_trace(signal, params).0
}

/// Like [`sift`], also returning the squared change per iteration.
pub fn sift_with_trace(signal: &[f64], params: &SiftParams) -> (Vec<f64>, Vec<f64>) {
    let mut h = signal.to_vec();
    let mut trace = Vec::new();
    for _ in 0..params.max_iters {
        let (maxima, minima) = find_extrema(&h);
        if maxima.len() < 2 || minima.len() < 2 {
            break;
        }
        let mean = local_mean_with_extrema(&h, &maxima, &minima);
        let prev_norm: f64 = h.iter().map(|v| v * v).sum();
        let change: f64 = mean.iter().map(|v| v * v).sum();
        for (hv, mv) in h.iter_mut().zip(&mean) {
            *hv -= mv;
        }
        trace.push(change);
        if prev_norm == 0.0 || change < params.tolerance * prev_norm {
            break;
        }
    }
    (h, trace)
}

/// Ordered modes plus the final residue; sums back to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub imfs: Vec<Vec<f64>>,
    pub residue: Vec<f64>,
    pub input_length: usize,
}

impl Decomposition {
    /// Pointwise sum of all modes and the residue, in extraction order.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residue.clone();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }

    /// Largest pointwise deviation of the reconstruction from `input`.
    pub fn max_reconstruction_error(&self, input: &[f64]) -> f64 {
        self.reconstruct()
            .iter()
            .zip(input)
            .map(|(r, x)| (r - x).abs())
            .fold(0.0, f64::max)
    }
}

/// Classic EMD: sift a mode, subtract, repeat until the residue has too few
/// extrema of either kind or `max_imfs` modes are out.
pub fn emd(signal: &[f64], max_imfs: usize, params: &SiftParams) -> Decomposition {
    let mut residue = signal.to_vec();
    let mut imfs = Vec::new();
    while imfs.len() < max_imfs {
        let (maxima, minima) = find_extrema(&residue);
        if maxima.len() < 2 || minima.len() < 2 {
            break;
        }
        let imf = sift(&residue, params);
        for (r, v) in residue.iter_mut().zip(&imf) {
            *r -= v;
        }
        imfs.push(imf);
    }
    Decomposition {
        imfs,
        residue,
        input_length: signal.len(),
    }
}
