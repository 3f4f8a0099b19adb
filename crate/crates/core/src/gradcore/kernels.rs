//! Row-wise numeric kernels shared by the forward and backward passes.

use super::graph::AffineIndex;
use super::Real;

/// Sum with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn sum_lanes<T: Real>(x: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] = acc[l] + c[l];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for &v in tail {
        s = s + v;
    }
    s
}

/// Dot product, lane-split like [`sum_lanes`].
#[inline]
pub(crate) fn dot_lanes<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (cx, cy) = (x.chunks_exact(8), y.chunks_exact(8));
    let (tx, ty) = (cx.remainder(), cy.remainder());
    for (a, b) in cx.zip(cy) {
        for l in 0..8 {
            acc[l] = acc[l] + a[l] * b[l];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&a, &b) in tx.iter().zip(ty) {
        s = s + a * b;
    }
    s
}

/// Softmax of every `width`-long row, max-subtracted.
pub(crate) fn softmax_rows<T: Real>(x: &[T], width: usize, out: &mut [T]) {
    for (xr, yr) in x.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let m = xr.iter().copied().fold(T::neg_infinity(), T::max);
        for (y, &v) in yr.iter_mut().zip(xr) {
            *y = (v - m).exp();
        }
        let inv = T::one() / sum_lanes(yr);
        for y in yr.iter_mut() {
            *y = *y * inv;
        }
    }
}

pub(crate) fn softmax_backward_acc<T: Real>(y: &[T], g: &[T], dx: &mut [T], width: usize) {
    for ((yr, gr), dr) in y.chunks_exact(width).zip(g.chunks_exact(width)).zip(dx.chunks_exact_mut(width)) {
        let dot = dot_lanes(yr, gr);
        for j in 0..width {
            dr[j] = dr[j] + yr[j] * (gr[j] - dot);
        }
    }
}

/// Gain/bias of one row: a per-column slice, or a single scalar pair.
enum RowAffine<'a, T> {
    Columns(&'a [T], &'a [T]),
    Scalar(T, T),
}

impl AffineIndex {
    fn row<'a, T: Real>(self, r: usize, gain: &'a [T], bias: &'a [T]) -> RowAffine<'a, T> {
        match self {
            AffineIndex::PerColumn => RowAffine::Columns(gain, bias),
            AffineIndex::PerGroup { .. } => {
                let p = self.index(r, 0);
                RowAffine::Scalar(gain[p], bias[p])
            }
        }
    }
}

/// Standardizes each row with population variance, then applies gain/bias.
/// Returns the per-row `1/sqrt(var + eps)` and writes the standardized
/// values into `xhat`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn normalize_rows<T: Real>(
    x: &[T],
    width: usize,
    eps: T,
    gain: &[T],
    bias: &[T],
    index: AffineIndex,
    xhat: &mut [T],
    out: &mut [T],
) -> Vec<T> {
    let n = T::from_f64(width as f64);
    let rows = x.len() / width;
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let span = r * width..(r + 1) * width;
        let (xr, hr, or) = (&x[span.clone()], &mut xhat[span.clone()], &mut out[span]);
        let mean = sum_lanes(xr) / n;
        for (h, &v) in hr.iter_mut().zip(xr) {
            *h = v - mean;
        }
        let var = dot_lanes(hr, hr) / n;
        let s = T::one() / (var + eps).sqrt();
        inv.push(s);
        for h in hr.iter_mut() {
            *h = *h * s;
        }
        match index.row(r, gain, bias) {
            RowAffine::Columns(g, b) => {
                for j in 0..width {
                    or[j] = g[j] * hr[j] + b[j];
                }
            }
            RowAffine::Scalar(g, b) => {
                for (o, &h) in or.iter_mut().zip(hr.iter()) {
                    *o = g * h + b;
                }
            }
        }
    }
    inv
}

/// Input gradient of [`normalize_rows`], accumulated into `dx`.
pub(crate) fn normalize_backward_input<T: Real>(
    g: &[T],
    xhat: &[T],
    inv: &[T],
    gain: &[T],
    index: AffineIndex,
    width: usize,
    dx: &mut [T],
) {
    let n = T::from_f64(width as f64);
    let mut dxhat = vec![T::zero(); width];
    for (r, &s) in inv.iter().enumerate() {
        let span = r * width..(r + 1) * width;
        let (gr, hr, dr) = (&g[span.clone()], &xhat[span.clone()], &mut dx[span]);
        match index.row(r, gain, gain) {
            RowAffine::Columns(ga, _) => {
                for j in 0..width {
                    dxhat[j] = gr[j] * ga[j];
                }
            }
            RowAffine::Scalar(ga, _) => {
                for (d, &v) in dxhat.iter_mut().zip(gr) {
                    *d = v * ga;
                }
            }
        }
        let mean_d = sum_lanes(&dxhat) / n;
        let mean_dx = dot_lanes(&dxhat, hr) / n;
        for j in 0..width {
            dr[j] = dr[j] + s * (dxhat[j] - mean_d - hr[j] * mean_dx);
        }
    }
}

/// Gain and bias gradients of [`normalize_rows`], accumulated.
pub(crate) fn normalize_backward_affine<T: Real>(
    g: &[T],
    xhat: &[T],
    index: AffineIndex,
    width: usize,
    dgain: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let rows = g.chunks_exact(width).zip(xhat.chunks_exact(width));
    match index {
        AffineIndex::PerColumn => {
            if let Some(dg) = dgain {
                for (gr, hr) in rows.clone() {
                    for j in 0..width {
                        dg[j] = dg[j] + gr[j] * hr[j];
                    }
                }
            }
            if let Some(db) = dbias {
                for gr in g.chunks_exact(width) {
                    for j in 0..width {
                        db[j] = db[j] + gr[j];
                    }
                }
            }
        }
        AffineIndex::PerGroup { .. } => {
            let (mut dg, mut db) = (dgain, dbias);
            for (r, (gr, hr)) in rows.enumerate() {
                let p = index.index(r, 0);
                if let Some(dg) = dg.as_deref_mut() {
                    dg[p] = dg[p] + dot_lanes(gr, hr);
                }
                if let Some(db) = db.as_deref_mut() {
                    db[p] = db[p] + sum_lanes(gr);
                }
            }
        }
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2 pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF; GELU is `x * cdf(x)`.
#[inline]
pub(crate) fn normal_cdf<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

/// GELU derivative given the cached `cdf(x)`.
#[inline]
pub(crate) fn gelu_grad_from_cdf<T: Real>(x: T, cdf: T) -> T {
    let pdf = T::from_f64(INV_SQRT_2PI) * (T::from_f64(-0.5) * x * x).exp();
    cdf + x * pdf
}

/// `[b, n, m*dh + h]` (from `src`) accumulated into `[b, m, n, h]` (`dst`).
pub(crate) fn split_heads_acc<T: Real>(src: &[T], dst: &mut [T], batch: usize, seq: usize, heads: usize, dh: usize) {
    let d = heads * dh;
    for b in 0..batch {
        for n in 0..seq {
            let s = (b * seq + n) * d;
            for m in 0..heads {
                let t = ((b * heads + m) * seq + n) * dh;
                for h in 0..dh {
                    dst[t + h] = dst[t + h] + src[s + m * dh + h];
                }
            }
        }
    }
}

/// `[b, m, n, h]` (from `src`) accumulated into `[b, n, m*dh + h]` (`dst`).
pub(crate) fn merge_heads_acc<T: Real>(src: &[T], dst: &mut [T], batch: usize, seq: usize, heads: usize, dh: usize) {
    let d = heads * dh;
    for b in 0..batch {
        for m in 0..heads {
            for n in 0..seq {
                let s = ((b * heads + m) * seq + n) * dh;
                let t = (b * seq + n) * d + m * dh;
                for h in 0..dh {
                    dst[t + h] = dst[t + h] + src[s + h];
                }
            }
        }
    }
}

/// `src` is `[outer, r, c]`; accumulates its transpose `[outer, c, r]` into `dst`.
pub(crate) fn transpose_acc<T: Real>(src: &[T], dst: &mut [T], outer: usize, r: usize, c: usize) {
    for o in 0..outer {
        let base = o * r * c;
        for i in 0..r {
            for j in 0..c {
                let t = base + j * r + i;
                dst[t] = dst[t] + src[base + i * c + j];
            }
        }
    }
}
