//! Raw numeric kernels over row-major slices. Shapes are validated by the
//! callers in `ops`.

use alloc::vec;
use alloc::vec::Vec;

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// (outer, len, inner) decomposition of `shape` around `axis`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = libm::exp(x[idx(k)] - max);
                out[idx(k)] = e;
                total += e;
            }
            for k in 0..len {
                out[idx(k)] /= total;
            }
        }
    }
    out
}

pub fn sum_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                out[o * inner + i] += x[(o * len + k) * inner + i];
            }
        }
    }
    out
}

pub fn broadcast_axis(x: &[f64], shape: &[usize], axis: usize, len: usize) -> Vec<f64> {
    let (outer, _, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        for k in 0..len {
            let dst = (o * len + k) * inner;
            out[dst..dst + inner].copy_from_slice(&x[o * inner..(o + 1) * inner]);
        }
    }
    out
}

pub fn slice_axis(x: &[f64], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<f64> {
    let (outer, full, inner) = axis_split(shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x[base..base + len * inner]);
    }
    out
}

pub fn pad_axis(x: &[f64], shape: &[usize], axis: usize, start: usize, total: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; outer * total * inner];
    for o in 0..outer {
        let src = o * len * inner;
        let dst = (o * total + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&x[src..src + len * inner]);
    }
    out
}

/// Per-row `logsumexp(z) - z[label]`.
pub fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(b, &y)| {
            let row = &logits[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            lse - row[y]
        })
        .collect()
}

/// Dimensions of a stride-1, zero-padded 3x3 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
}

/// `y[b,o,h,w] = sum_{i,p,q} k[o,i,p,q] * x[b,i,h+p-1,w+q-1]`
pub fn conv2d(x: &[f64], k: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims { batch, in_ch, out_ch, height: hh, width: ww } = d;
    let plane = hh * ww;
    let mut out = vec![0.0; batch * out_ch * plane];
    for b in 0..batch {
        for o in 0..out_ch {
            let dst = &mut out[(b * out_ch + o) * plane..(b * out_ch + o + 1) * plane];
            for i in 0..in_ch {
                let src = &x[(b * in_ch + i) * plane..(b * in_ch + i + 1) * plane];
                let kern = &k[(o * in_ch + i) * 9..(o * in_ch + i + 1) * 9];
                for p in 0..3 {
                    for q in 0..3 {
                        let kv = kern[p * 3 + q];
                        if kv == 0.0 {
                            continue;
                        }
                        let (h0, h1) = valid_range(p, hh);
                        let (w0, w1) = valid_range(q, ww);
                        for h in h0..h1 {
                            let sh = h + p - 1;
                            let drow = &mut dst[h * ww..(h + 1) * ww];
                            let srow = &src[sh * ww..(sh + 1) * ww];
                            for w in w0..w1 {
                                drow[w] += kv * srow[w + q - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `g_k[o,i,p,q] = sum_{b,h,w} g[b,o,h,w] * x[b,i,h+p-1,w+q-1]`
pub fn conv2d_kernel_grad(x: &[f64], g: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims { batch, in_ch, out_ch, height: hh, width: ww } = d;
    let plane = hh * ww;
    let mut out = vec![0.0; out_ch * in_ch * 9];
    for b in 0..batch {
        for o in 0..out_ch {
            let gp = &g[(b * out_ch + o) * plane..(b * out_ch + o + 1) * plane];
            for i in 0..in_ch {
                let xp = &x[(b * in_ch + i) * plane..(b * in_ch + i + 1) * plane];
                let kern = &mut out[(o * in_ch + i) * 9..(o * in_ch + i + 1) * 9];
                for p in 0..3 {
                    for q in 0..3 {
                        let (h0, h1) = valid_range(p, hh);
                        let (w0, w1) = valid_range(q, ww);
                        let mut acc = 0.0;
                        for h in h0..h1 {
                            let sh = h + p - 1;
                            for w in w0..w1 {
                                acc += gp[h * ww + w] * xp[sh * ww + w + q - 1];
                            }
                        }
                        kern[p * 3 + q] += acc;
                    }
                }
            }
        }
    }
    out
}

/// `(o, i, p, q) -> (i, o, 2-p, 2-q)`: the kernel of the adjoint convolution.
pub fn kernel_flip(k: &[f64], out_ch: usize, in_ch: usize) -> Vec<f64> {
    let mut out = vec![0.0; k.len()];
    for o in 0..out_ch {
        for i in 0..in_ch {
            for p in 0..3 {
                for q in 0..3 {
                    out[((i * out_ch + o) * 3 + (2 - p)) * 3 + (2 - q)] =
                        k[((o * in_ch + i) * 3 + p) * 3 + q];
                }
            }
        }
    }
    out
}

/// 3x3 mean filter with zero padding, always dividing by 9. The operator is
/// symmetric, so it is its own adjoint.
pub fn avg_pool3(x: &[f64], planes: usize, hh: usize, ww: usize) -> Vec<f64> {
    let plane = hh * ww;
    let mut out = vec![0.0; x.len()];
    for c in 0..planes {
        let src = &x[c * plane..(c + 1) * plane];
        let dst = &mut out[c * plane..(c + 1) * plane];
        for h in 0..hh {
            for w in 0..ww {
                let mut acc = 0.0;
                for sh in h.saturating_sub(1)..(h + 2).min(hh) {
                    for sw in w.saturating_sub(1)..(w + 2).min(ww) {
                        acc += src[sh * ww + sw];
                    }
                }
                dst[h * ww + w] = acc / 9.0;
            }
        }
    }
    out
}

/// Output rows `h` for which `h + p - 1` stays inside `[0, len)`.
fn valid_range(p: usize, len: usize) -> (usize, usize) {
    let lo = if p == 0 { 1 } else { 0 };
    let hi = if p == 2 { len - 1 } else { len };
    (lo, hi.max(lo))
}
