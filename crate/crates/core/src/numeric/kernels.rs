//! Raw-slice kernels shared by the autodiff graph and the plain tensor ops.
//!
//! All layouts are row-major; images and feature maps are `[C, H, W]`.

use std::cell::Cell;

use crate::scalar::Scalar;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulate counter for matrix products on the current thread.
pub mod flops {
    use super::MACS;

    pub fn reset() {
        MACS.with(|c| c.set(0));
    }

    pub fn count() -> u64 {
        MACS.with(|c| c.get())
    }
}

#[inline]
fn tally(n: usize) {
    MACS.with(|c| c.set(c.get() + n as u64));
}

/// `c[m,n] += a[m,k] * b[k,n]`
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    tally(m * k * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    tally(m * k * n);
    for kk in 0..k {
        let b_row = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aki = a[kk * m + i];
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aki * bj;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let bt = transpose(n, k, b);
    gemm(m, k, n, a, &bt, c);
}

/// Transposes a `[rows, cols]` matrix.
pub fn transpose<T: Scalar>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Unfolds zero-padded `k×k` neighbourhoods: `[C*k*k, H*W]`.
pub fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![T::zero(); c * k * k * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        dst_row[xx] = src_row[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut x = vec![T::zero(); c * hw];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    let base = ci * hw + sy as usize * w;
                    for xx in x0..x1 {
                        x[base + (xx as isize + dx) as usize] += src[y * w + xx];
                    }
                }
            }
        }
    }
    x
}

pub fn avg_pool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let i = ci * h * w + 2 * y * w + 2 * xx;
                out[(ci * oh + y) * ow + xx] = (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut dx = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let gv = g[(ci * oh + y) * ow + xx] * quarter;
                let i = ci * h * w + 2 * y * w + 2 * xx;
                dx[i] = gv;
                dx[i + 1] = gv;
                dx[i + w] = gv;
                dx[i + w + 1] = gv;
            }
        }
    }
    dx
}

/// Source index (into the `[4C, H, W]` input) of every element of the
/// `[C, 2H, 2W]` pixel-shuffled output.
pub fn pixel_shuffle_index(c_out: usize, h: usize, w: usize) -> Vec<usize> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut idx = Vec::with_capacity(c_out * oh * ow);
    for c in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let sub = (oy % 2) * 2 + ox % 2;
                let src_c = c * 4 + sub;
                idx.push((src_c * h + oy / 2) * w + ox / 2);
            }
        }
    }
    idx
}

/// Per output coordinate: the two source taps and the weight of the second.
fn linear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centres (align-corners = false).
pub fn bilinear_resize<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ys = linear_taps(oh, h);
    let xs = linear_taps(ow, w);
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::lit(fx);
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                out[(ci * oh + oy) * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn bilinear_resize_backward<T: Scalar>(
    g: &[T],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let ys = linear_taps(oh, h);
    let xs = linear_taps(ow, w);
    let mut dx = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::lit(fx);
                let gv = g[(ci * oh + oy) * ow + ox];
                let top = gv * (T::one() - fy);
                let bot = gv * fy;
                plane[y0 * w + x0] += top * (T::one() - fx);
                plane[y0 * w + x1] += top * fx;
                plane[y1 * w + x0] += bot * (T::one() - fx);
                plane[y1 * w + x1] += bot * fx;
            }
        }
    }
    dx
}

/// Softmax over the middle extent of an `[outer, len, inner]` view.
pub fn softmax<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[at(j)]);
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                sum += e;
            }
            for j in 0..len {
                out[at(j)] /= sum;
            }
        }
    }
    out
}

pub fn softmax_backward<T: Scalar>(y: &[T], g: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot: T = (0..len).map(|j| y[at(j)] * g[at(j)]).sum();
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
            }
        }
    }
    dx
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::lit(SQRT_2_OVER_PI) * (x + T::lit(GELU_CUBIC) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::lit(SQRT_2_OVER_PI);
    let a = T::lit(GELU_CUBIC);
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::lit(3.0) * a * x * x)
}

/// Per-pixel normalization across channels of a `[C, HW]` map.
/// Returns `(y, xhat, inv_std)`.
pub fn layer_norm_channels<T: Scalar>(
    x: &[T],
    c: usize,
    hw: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv_c = T::one() / T::lit(c as f64);
    let mut mean = vec![T::zero(); hw];
    for ci in 0..c {
        for (m, &v) in mean.iter_mut().zip(&x[ci * hw..(ci + 1) * hw]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_c);
    let mut var = vec![T::zero(); hw];
    for ci in 0..c {
        for ((s, &v), &m) in var.iter_mut().zip(&x[ci * hw..(ci + 1) * hw]).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s * inv_c + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); c * hw];
    let mut y = vec![T::zero(); c * hw];
    for ci in 0..c {
        for p in 0..hw {
            let i = ci * hw + p;
            xhat[i] = (x[i] - mean[p]) * inv_std[p];
            y[i] = xhat[i] * gamma[ci] + beta[ci];
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_channels_backward<T: Scalar>(
    g: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut sum_g = vec![T::zero(); hw];
    let mut sum_gx = vec![T::zero(); hw];
    for ci in 0..c {
        for p in 0..hw {
            let i = ci * hw + p;
            dgamma[ci] += g[i] * xhat[i];
            dbeta[ci] += g[i];
            let gh = g[i] * gamma[ci];
            sum_g[p] += gh;
            sum_gx[p] += gh * xhat[i];
        }
    }
    let inv_c = T::one() / T::lit(c as f64);
    let mut dx = vec![T::zero(); c * hw];
    for ci in 0..c {
        for p in 0..hw {
            let i = ci * hw + p;
            let gh = g[i] * gamma[ci];
            dx[i] = inv_std[p] * (gh - inv_c * sum_g[p] - xhat[i] * inv_c * sum_gx[p]);
        }
    }
    (dx, dgamma, dbeta)
}

/// Strides-based index map for an axis permutation: `out[i] = x[map[i]]`.
pub fn permute_index(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        for d in (0..rank).rev() {
            counter[d] += 1;
            src += out_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src -= out_strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    (map, out_shape)
}
