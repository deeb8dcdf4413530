//! Dense kernels for the trunk and heads. All tensors are flat row-major
//! slices; convolutions use "same" zero padding and stride 1.

use super::Scalar;

/// Unfold `input` into one row of `in_c * k * k` taps per output pixel
/// (zero where the tap falls in the padding), so a convolution becomes a
/// product with the weight matrix.
fn im2col<T: Scalar>(input: &[T], in_c: usize, s: usize, k: usize) -> Vec<T> {
    let plane = s * s;
    let taps = in_c * k * k;
    let pad = (k / 2) as isize;
    let mut col = vec![T::zero(); plane * taps];
    for y in 0..s {
        for x in 0..s {
            let row = &mut col[(y * s + x) * taps..][..taps];
            for ic in 0..in_c {
                for ky in 0..k {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= s as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x as isize + kx as isize - pad;
                        if ix >= 0 && ix < s as isize {
                            row[(ic * k + ky) * k + kx] = input[ic * plane + iy as usize * s + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add of [`im2col`] rows back into input planes.
fn col2im<T: Scalar>(col: &[T], in_c: usize, s: usize, k: usize, din: &mut [T]) {
    let plane = s * s;
    let taps = in_c * k * k;
    let pad = (k / 2) as isize;
    for y in 0..s {
        for x in 0..s {
            let row = &col[(y * s + x) * taps..][..taps];
            for ic in 0..in_c {
                for ky in 0..k {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= s as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x as isize + kx as isize - pad;
                        if ix >= 0 && ix < s as isize {
                            din[ic * plane + iy as usize * s + ix as usize] += row[(ic * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// `dst += alpha * src`.
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, src: &[T], dst: &mut [T]) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += alpha * v;
    }
}

/// Accumulate a `k x k` same-padded convolution of `input` (`in_c` planes of
/// `s x s`) into `out` (`out_c` planes), starting from the bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Scalar>(
    input: &[T],
    in_c: usize,
    s: usize,
    weight: &[T],
    bias: &[T],
    out_c: usize,
    k: usize,
    out: &mut [T],
) {
    let plane = s * s;
    let taps = in_c * k * k;
    let col = im2col(input, in_c, s, k);
    for oc in 0..out_c {
        let w = &weight[oc * taps..(oc + 1) * taps];
        for (p, row) in col.chunks_exact(taps).enumerate() {
            out[oc * plane + p] = bias[oc] + dot(w, row);
        }
    }
}

/// Gradients of a same-padded convolution. `din` is skipped for the first
/// stage, whose input is the observation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    input: &[T],
    in_c: usize,
    s: usize,
    weight: &[T],
    out_c: usize,
    k: usize,
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    din: Option<&mut [T]>,
) {
    let plane = s * s;
    let taps = in_c * k * k;
    let col = im2col(input, in_c, s, k);
    let mut dcol = din.is_some().then(|| vec![T::zero(); taps * plane]);
    for oc in 0..out_c {
        let g = &dout[oc * plane..(oc + 1) * plane];
        let w = &weight[oc * taps..(oc + 1) * taps];
        let dw = &mut dweight[oc * taps..(oc + 1) * taps];
        for (p, &gv) in g.iter().enumerate() {
            if gv == T::zero() {
                continue;
            }
            dbias[oc] += gv;
            axpy(gv, &col[p * taps..(p + 1) * taps], dw);
            if let Some(dcol) = dcol.as_mut() {
                axpy(gv, w, &mut dcol[p * taps..(p + 1) * taps]);
            }
        }
    }
    if let (Some(dcol), Some(din)) = (dcol, din) {
        col2im(&dcol, in_c, s, k, din);
    }
}

/// ReLU followed by 2x2 max-pooling (floor). Returns, for every pooled cell,
/// the flat index of the winning pre-activation.
pub(crate) fn relu_pool_forward<T: Scalar>(
    conv: &[T],
    channels: usize,
    s: usize,
    pooled: &mut [T],
    argmax: &mut [u32],
) {
    let h = s / 2;
    for c in 0..channels {
        for py in 0..h {
            for px in 0..h {
                let mut best_idx = c * s * s + (2 * py) * s + 2 * px;
                let mut best = conv[best_idx].max(T::zero());
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = c * s * s + (2 * py + dy) * s + 2 * px + dx;
                    let v = conv[idx].max(T::zero());
                    if v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                let o = c * h * h + py * h + px;
                pooled[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

pub(crate) fn relu_pool_backward<T: Scalar>(
    conv: &[T],
    argmax: &[u32],
    dpooled: &[T],
    dconv: &mut [T],
) {
    for (&idx, &g) in argmax.iter().zip(dpooled) {
        let idx = idx as usize;
        if conv[idx] > T::zero() {
            dconv[idx] += g;
        }
    }
}

/// `out = W x + b` with `W` stored `out x in`.
pub(crate) fn dense_forward<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let n_in = x.len();
    for (o, (row, &bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        *o = bias + dot(row, x);
    }
}

/// Accumulates `dW += dy x^T`, `db += dy` and, if requested, `dx += W^T dy`.
pub(crate) fn dense_backward<T: Scalar>(
    w: &[T],
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let n_in = x.len();
    for (o, &g) in dy.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        db[o] += g;
        axpy(g, x, &mut dw[o * n_in..(o + 1) * n_in]);
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            axpy(g, &w[o * n_in..(o + 1) * n_in], dx);
        }
    }
}
