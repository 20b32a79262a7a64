//! Slice-level numeric kernels shared by the tape's forward and backward
//! rules. All matrices are row-major.

use super::Real;

/// Half-open range of key indices a query row may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyRange {
    pub lo: usize,
    pub hi: usize,
}

impl KeyRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        debug_assert!(lo < hi);
        KeyRange { lo, hi }
    }
}

/// `a (m×k) · b (k×n)`.
pub fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a (m×n) · bᵀ` where `b` is `p×n`.
pub fn matmul_bt<F: Real>(a: &[F], b: &[F], m: usize, n: usize, p: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * p];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..p {
            let brow = &b[j * n..(j + 1) * n];
            out[i * p + j] = dot(arow, brow);
        }
    }
    out
}

/// `aᵀ · c` where `a` is `m×k` and `c` is `m×n`; result `k×n`.
pub fn matmul_at<F: Real>(a: &[F], c: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * n];
    for i in 0..m {
        let crow = &c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &cv) in orow.iter_mut().zip(crow) {
                *o += aip * cv;
            }
        }
    }
    out
}

pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// In-place max-subtracted softmax over `row`.
pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

/// Row-wise softmax; entries outside a row's key range get probability 0.
pub fn softmax_rows<F: Real>(
    x: &[F],
    rows: usize,
    cols: usize,
    ranges: Option<&[KeyRange]>,
) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for r in 0..rows {
        let (lo, hi) = ranges.map_or((0, cols), |rg| (rg[r].lo, rg[r].hi));
        let dst = &mut out[r * cols + lo..r * cols + hi];
        dst.copy_from_slice(&x[r * cols + lo..r * cols + hi]);
        softmax_in_place(dst);
    }
    out
}

/// Backward of row softmax given its output `y` and upstream `g`.
pub fn softmax_rows_backward<F: Real>(y: &[F], g: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &g[r * cols..(r + 1) * cols];
        let s = dot(yr, gr);
        for c in 0..cols {
            out[r * cols + c] = yr[c] * (gr[c] - s);
        }
    }
    out
}

/// Saved state of a multi-head attention forward pass.
#[derive(Debug, Clone)]
pub struct AttentionSaved<F> {
    /// `heads × m × l` probabilities (zero outside key ranges).
    pub probs: Vec<F>,
}

/// Scaled dot-product attention split into `heads` column groups.
///
/// `q` is `m×d`, `k` and `v` are `l×d`. Returns the `m×d` head-concatenated
/// output and the attention probabilities.
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    m: usize,
    l: usize,
    d: usize,
    heads: usize,
    scale: F,
    ranges: Option<&[KeyRange]>,
) -> (Vec<F>, AttentionSaved<F>) {
    let dh = d / heads;
    let mut out = vec![F::zero(); m * d];
    let mut probs = vec![F::zero(); heads * m * l];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..m {
            let (lo, hi) = ranges.map_or((0, l), |rg| (rg[i].lo, rg[i].hi));
            let qi = &q[i * d + c0..i * d + c0 + dh];
            let prow = &mut probs[(h * m + i) * l..(h * m + i + 1) * l];
            for j in lo..hi {
                prow[j] = dot(qi, &k[j * d + c0..j * d + c0 + dh]) * scale;
            }
            softmax_in_place(&mut prow[lo..hi]);
            let orow = &mut out[i * d + c0..i * d + c0 + dh];
            for j in lo..hi {
                let p = prow[j];
                let vj = &v[j * d + c0..j * d + c0 + dh];
                for (o, &vv) in orow.iter_mut().zip(vj) {
                    *o += p * vv;
                }
            }
        }
    }
    (out, AttentionSaved { probs })
}

/// Gradients `(dq, dk, dv)` of [`attention_forward`].
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Real>(
    g: &[F],
    q: &[F],
    k: &[F],
    v: &[F],
    saved: &AttentionSaved<F>,
    m: usize,
    l: usize,
    d: usize,
    heads: usize,
    scale: F,
    ranges: Option<&[KeyRange]>,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let dh = d / heads;
    let mut dq = vec![F::zero(); m * d];
    let mut dk = vec![F::zero(); l * d];
    let mut dv = vec![F::zero(); l * d];
    let mut ds = vec![F::zero(); l];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..m {
            let (lo, hi) = ranges.map_or((0, l), |rg| (rg[i].lo, rg[i].hi));
            let prow = &saved.probs[(h * m + i) * l..(h * m + i + 1) * l];
            let gi = &g[i * d + c0..i * d + c0 + dh];
            let mut weighted = F::zero();
            for j in lo..hi {
                let dp = dot(gi, &v[j * d + c0..j * d + c0 + dh]);
                ds[j] = dp;
                weighted += dp * prow[j];
            }
            for j in lo..hi {
                ds[j] = prow[j] * (ds[j] - weighted) * scale;
            }
            let qi = &q[i * d + c0..i * d + c0 + dh];
            for j in lo..hi {
                let p = prow[j];
                let sj = ds[j];
                let kj = &k[j * d + c0..j * d + c0 + dh];
                let dqi = &mut dq[i * d + c0..i * d + c0 + dh];
                for (o, &kv) in dqi.iter_mut().zip(kj) {
                    *o += sj * kv;
                }
                let dkj = &mut dk[j * d + c0..j * d + c0 + dh];
                for (o, &qv) in dkj.iter_mut().zip(qi) {
                    *o += sj * qv;
                }
                let dvj = &mut dv[j * d + c0..j * d + c0 + dh];
                for (o, &gv) in dvj.iter_mut().zip(gi) {
                    *o += p * gv;
                }
            }
        }
    }
    (dq, dk, dv)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalization. Returns `(y, xhat, inv_std)`.
pub fn layer_norm_forward<F: Real>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    rows: usize,
    cols: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let n = F::of(cols as f64);
    let eps = F::of(LAYER_NORM_EPS);
    let mut y = vec![F::zero(); rows * cols];
    let mut xhat = vec![F::zero(); rows * cols];
    let mut inv = vec![F::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let mean = xr.iter().copied().sum::<F>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let is = F::one() / (var + eps).sqrt();
        inv[r] = is;
        for c in 0..cols {
            let xh = (xr[c] - mean) * is;
            xhat[r * cols + c] = xh;
            y[r * cols + c] = xh * gain[c] + bias[c];
        }
    }
    (y, xhat, inv)
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<F: Real>(
    g: &[F],
    xhat: &[F],
    inv: &[F],
    gain: &[F],
    rows: usize,
    cols: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let n = F::of(cols as f64);
    let mut dx = vec![F::zero(); rows * cols];
    let mut dgain = vec![F::zero(); cols];
    let mut dbias = vec![F::zero(); cols];
    let mut dxhat = vec![F::zero(); cols];
    for r in 0..rows {
        let gr = &g[r * cols..(r + 1) * cols];
        let xr = &xhat[r * cols..(r + 1) * cols];
        let mut sum_d = F::zero();
        let mut sum_dx = F::zero();
        for c in 0..cols {
            dgain[c] += gr[c] * xr[c];
            dbias[c] += gr[c];
            dxhat[c] = gr[c] * gain[c];
            sum_d += dxhat[c];
            sum_dx += dxhat[c] * xr[c];
        }
        for c in 0..cols {
            dx[r * cols + c] = inv[r] / n * (n * dxhat[c] - sum_d - xr[c] * sum_dx);
        }
    }
    (dx, dgain, dbias)
}

/// Exact GELU, `0.5·x·(1 + erf(x/√2))`.
pub fn gelu<F: Real>(x: F) -> F {
    F::of(0.5) * x * (F::one() + (x * F::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let cdf = F::of(0.5) * (F::one() + (x * F::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * F::of(0.5)).exp() * F::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}
