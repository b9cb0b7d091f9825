//! Raw NHWC kernels used by the tape.
//!
//! Parallel kernels split work so that every output element is owned by a
//! single worker and summed in a fixed order, so results do not depend on
//! the thread count.

use rayon::prelude::*;

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        (self.k as isize - 1) / 2
    }
}

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::ZERO;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Stride-1 SAME convolution.
pub(crate) fn conv2d_forward<T: Scalar>(g: ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let ConvGeom { h, w, cin, cout, k, .. } = g;
    let pad = g.pad();
    let mut out = vec![T::ZERO; g.n * h * w * cout];
    out.par_chunks_mut(w * cout).enumerate().for_each(|(row, out_row)| {
        let n = row / h;
        let y = (row % h) as isize;
        for x in 0..w {
            let px = &mut out_row[x * cout..(x + 1) * cout];
            px.copy_from_slice(bias);
            for ky in 0..k {
                let iy = y + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_off = ((n * h + iy as usize) * w + ix as usize) * cin;
                    let in_px = &input[in_off..in_off + cin];
                    let w_tap = &weight[(ky * k + kx) * cin * cout..(ky * k + kx + 1) * cin * cout];
                    for (ci, &a) in in_px.iter().enumerate() {
                        if a == T::ZERO {
                            continue;
                        }
                        axpy(px, a, &w_tap[ci * cout..(ci + 1) * cout]);
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv2d_backward_input<T: Scalar>(g: ConvGeom, grad_out: &[T], weight: &[T]) -> Vec<T> {
    let ConvGeom { h, w, cin, cout, k, .. } = g;
    let pad = g.pad();
    let mut grad_in = vec![T::ZERO; g.n * h * w * cin];
    grad_in.par_chunks_mut(w * cin).enumerate().for_each(|(row, gin_row)| {
        let n = row / h;
        let iy = (row % h) as isize;
        for ix in 0..w {
            let gpx = &mut gin_row[ix * cin..(ix + 1) * cin];
            for ky in 0..k {
                let y = iy - ky as isize + pad;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let x = ix as isize - kx as isize + pad;
                    if x < 0 || x >= w as isize {
                        continue;
                    }
                    let go_off = ((n * h + y as usize) * w + x as usize) * cout;
                    let go = &grad_out[go_off..go_off + cout];
                    let w_tap = &weight[(ky * k + kx) * cin * cout..(ky * k + kx + 1) * cin * cout];
                    for (ci, gv) in gpx.iter_mut().enumerate() {
                        *gv += dot(go, &w_tap[ci * cout..(ci + 1) * cout]);
                    }
                }
            }
        }
    });
    grad_in
}

pub(crate) fn conv2d_backward_weight<T: Scalar>(g: ConvGeom, input: &[T], grad_out: &[T]) -> Vec<T> {
    let ConvGeom { n, h, w, cin, cout, k } = g;
    let pad = g.pad();
    let mut grad_w = vec![T::ZERO; k * k * cin * cout];
    grad_w.par_chunks_mut(cin * cout).enumerate().for_each(|(tap, gw)| {
        let ky = (tap / k) as isize;
        let kx = (tap % k) as isize;
        for b in 0..n {
            for y in 0..h {
                let iy = y as isize + ky - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let ix = x as isize + kx - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let in_off = ((b * h + iy as usize) * w + ix as usize) * cin;
                    let go_off = ((b * h + y) * w + x) * cout;
                    let go = &grad_out[go_off..go_off + cout];
                    for (ci, &a) in input[in_off..in_off + cin].iter().enumerate() {
                        if a == T::ZERO {
                            continue;
                        }
                        axpy(&mut gw[ci * cout..(ci + 1) * cout], a, go);
                    }
                }
            }
        }
    });
    grad_w
}

/// Sums `grad_out` over every position, leaving one value per channel.
pub(crate) fn channel_sum<T: Scalar>(grad_out: &[T], c: usize) -> Vec<T> {
    let mut acc = vec![T::ZERO; c];
    for px in grad_out.chunks_exact(c) {
        for (a, &g) in acc.iter_mut().zip(px) {
            *a += g;
        }
    }
    acc
}

/// Transposed 3x3 convolution, stride 2. Input position `y` feeds output
/// rows `2y + ky` for `ky` in `0..3`; taps landing past the last row are
/// dropped, so the output is exactly `2h x 2w`.
pub(crate) fn conv_t2d_forward<T: Scalar>(g: ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let ConvGeom { h, w, cin, cout, k, .. } = g;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; g.n * oh * ow * cout];
    out.par_chunks_mut(ow * cout).enumerate().for_each(|(row, out_row)| {
        let n = row / oh;
        let oy = row % oh;
        for ox in 0..ow {
            let px = &mut out_row[ox * cout..(ox + 1) * cout];
            px.copy_from_slice(bias);
            for ky in 0..k {
                if oy < ky || (oy - ky) % 2 != 0 {
                    continue;
                }
                let y = (oy - ky) / 2;
                if y >= h {
                    continue;
                }
                for kx in 0..k {
                    if ox < kx || (ox - kx) % 2 != 0 {
                        continue;
                    }
                    let x = (ox - kx) / 2;
                    if x >= w {
                        continue;
                    }
                    let in_off = ((n * h + y) * w + x) * cin;
                    let w_tap = &weight[(ky * k + kx) * cin * cout..(ky * k + kx + 1) * cin * cout];
                    for (ci, &a) in input[in_off..in_off + cin].iter().enumerate() {
                        if a == T::ZERO {
                            continue;
                        }
                        axpy(px, a, &w_tap[ci * cout..(ci + 1) * cout]);
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv_t2d_backward_input<T: Scalar>(g: ConvGeom, grad_out: &[T], weight: &[T]) -> Vec<T> {
    let ConvGeom { h, w, cin, cout, k, .. } = g;
    let (oh, ow) = (2 * h, 2 * w);
    let mut grad_in = vec![T::ZERO; g.n * h * w * cin];
    grad_in.par_chunks_mut(w * cin).enumerate().for_each(|(row, gin_row)| {
        let n = row / h;
        let y = row % h;
        for x in 0..w {
            let gpx = &mut gin_row[x * cin..(x + 1) * cin];
            for ky in 0..k {
                let oy = 2 * y + ky;
                if oy >= oh {
                    continue;
                }
                for kx in 0..k {
                    let ox = 2 * x + kx;
                    if ox >= ow {
                        continue;
                    }
                    let go_off = ((n * oh + oy) * ow + ox) * cout;
                    let go = &grad_out[go_off..go_off + cout];
                    let w_tap = &weight[(ky * k + kx) * cin * cout..(ky * k + kx + 1) * cin * cout];
                    for (ci, gv) in gpx.iter_mut().enumerate() {
                        *gv += dot(go, &w_tap[ci * cout..(ci + 1) * cout]);
                    }
                }
            }
        }
    });
    grad_in
}

pub(crate) fn conv_t2d_backward_weight<T: Scalar>(g: ConvGeom, input: &[T], grad_out: &[T]) -> Vec<T> {
    let ConvGeom { n, h, w, cin, cout, k } = g;
    let (oh, ow) = (2 * h, 2 * w);
    let mut grad_w = vec![T::ZERO; k * k * cin * cout];
    grad_w.par_chunks_mut(cin * cout).enumerate().for_each(|(tap, gw)| {
        let ky = tap / k;
        let kx = tap % k;
        for b in 0..n {
            for y in 0..h {
                let oy = 2 * y + ky;
                if oy >= oh {
                    continue;
                }
                for x in 0..w {
                    let ox = 2 * x + kx;
                    if ox >= ow {
                        continue;
                    }
                    let in_off = ((b * h + y) * w + x) * cin;
                    let go_off = ((b * oh + oy) * ow + ox) * cout;
                    let go = &grad_out[go_off..go_off + cout];
                    for (ci, &a) in input[in_off..in_off + cin].iter().enumerate() {
                        if a == T::ZERO {
                            continue;
                        }
                        axpy(&mut gw[ci * cout..(ci + 1) * cout], a, go);
                    }
                }
            }
        }
    });
    grad_w
}

/// 2x2 max pooling. Returns the pooled values and, per output element, the
/// flat input index that won. Ties go to the first element in row-major
/// window order.
pub(crate) fn maxpool2_forward<T: Scalar>(dims: [usize; 4], input: &[T]) -> (Vec<T>, Vec<u32>) {
    let [n, h, w, c] = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::ZERO; n * oh * ow * c];
    let mut arg = vec![0u32; out.len()];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = input[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                    let o = ((b * oh + oy) * ow + ox) * c + ch;
                    out[o] = best;
                    arg[o] = best_idx as u32;
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// Copies channel blocks of several NHWC tensors (same n, h, w) side by side.
pub(crate) fn concat_channels<T: Scalar>(parts: &[(&[T], usize)], positions: usize) -> Vec<T> {
    let total: usize = parts.iter().map(|p| p.1).sum();
    let mut out = Vec::with_capacity(positions * total);
    for pos in 0..positions {
        for &(data, c) in parts {
            out.extend_from_slice(&data[pos * c..(pos + 1) * c]);
        }
    }
    out
}
