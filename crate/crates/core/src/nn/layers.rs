//! Per-sample kernels for the five layer types. Activations are laid out
//! HWC (channels fastest), matching a batch tensor of shape `(BS, H, W, C)`.

use super::tensor::Scalar;

/// Spatial extent of one sample's activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hwc {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Hwc {
    pub fn len(self) -> usize {
        self.h * self.w * self.c
    }
}

/// 3x3 patches with one pixel of zero padding: row `y*w + x` holds the
/// neighbourhood of `(y, x)` ordered `(ky, kx, c)`.
pub fn im2col<T: Scalar>(input: &[T], dim: Hwc, cols: &mut [T]) {
    let Hwc { h, w, c } = dim;
    let k = 9 * c;
    for y in 0..h {
        for x in 0..w {
            let row = &mut cols[(y * w + x) * k..(y * w + x + 1) * k];
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                for kx in 0..3 {
                    let ix = x as isize + kx as isize - 1;
                    let dst = &mut row[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        dst.fill(T::zero());
                    } else {
                        let src = (iy as usize * w + ix as usize) * c;
                        dst.copy_from_slice(&input[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im<T: Scalar>(cols: &[T], dim: Hwc, input_grad: &mut [T]) {
    let Hwc { h, w, c } = dim;
    let k = 9 * c;
    input_grad.fill(T::zero());
    for y in 0..h {
        for x in 0..w {
            let row = &cols[(y * w + x) * k..(y * w + x + 1) * k];
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    let src = &row[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                    for (d, &s) in input_grad[dst..dst + c].iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Same-padded 3x3 convolution. `weight` is `(3, 3, c_in, c_out)` row-major.
pub fn conv2d_forward<T: Scalar>(input: &[T], dim: Hwc, weight: &[T], bias: &[T], out: &mut [T]) {
    let cout = bias.len();
    let pixels = dim.h * dim.w;
    let k = 9 * dim.c;
    let mut cols = vec![T::zero(); pixels * k];
    im2col(input, dim, &mut cols);
    for row in out.chunks_exact_mut(cout) {
        row.copy_from_slice(bias);
    }
    T::gemm(pixels, k, cout, T::one(), &cols, k, 1, weight, cout, 1, T::one(), out, cout, 1);
}

/// Returns `(d_weight, d_bias)` for one sample and writes `d_input`.
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    dim: Hwc,
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    grad_in: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let pixels = dim.h * dim.w;
    let k = 9 * dim.c;
    let mut cols = vec![T::zero(); pixels * k];
    im2col(input, dim, &mut cols);

    let mut dw = vec![T::zero(); k * cout];
    T::gemm(k, pixels, cout, T::one(), &cols, 1, k, grad_out, cout, 1, T::zero(), &mut dw, cout, 1);

    let mut db = vec![T::zero(); cout];
    for row in grad_out.chunks_exact(cout) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }

    // cols is reused as d_cols
    T::gemm(pixels, cout, k, T::one(), grad_out, cout, 1, weight, 1, cout, T::zero(), &mut cols, k, 1);
    col2im(&cols, dim, grad_in);
    (dw, db)
}

pub fn relu_forward<T: Scalar>(input: &[T], out: &mut [T]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = if x > T::zero() { x } else { T::zero() };
    }
}

pub fn relu_backward<T: Scalar>(input: &[T], grad_out: &[T], grad_in: &mut [T]) {
    for ((g, &x), &d) in grad_in.iter_mut().zip(input).zip(grad_out) {
        *g = if x > T::zero() { d } else { T::zero() };
    }
}

/// 2x2, stride 2, floor semantics. Records the flat input index of each
/// window maximum (first occurrence in row-major window order).
pub fn maxpool_forward<T: Scalar>(input: &[T], dim: Hwc, out: &mut [T], argmax: &mut [u32]) {
    let Hwc { w, c, .. } = dim;
    let (oh, ow) = (dim.h / 2, dim.w / 2);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((2 * oy) * w + 2 * ox) * c + ch;
                let mut best = input[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if input[idx] > best {
                        best = input[idx];
                        best_idx = idx;
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

pub fn maxpool_backward<T: Scalar>(argmax: &[u32], grad_out: &[T], grad_in: &mut [T]) {
    grad_in.fill(T::zero());
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        let slot = &mut grad_in[idx as usize];
        *slot = *slot + g;
    }
}

/// `out = x W + b` for `W` of shape `(in, out)`.
pub fn dense_forward<T: Scalar>(input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let (nin, nout) = (input.len(), bias.len());
    out.copy_from_slice(bias);
    T::gemm(1, nin, nout, T::one(), input, nin, 1, weight, nout, 1, T::one(), out, nout, 1);
}

pub fn dense_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_in: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let (nin, nout) = (input.len(), grad_out.len());
    let mut dw = vec![T::zero(); nin * nout];
    for (row, &x) in dw.chunks_exact_mut(nout).zip(input) {
        for (d, &g) in row.iter_mut().zip(grad_out) {
            *d = x * g;
        }
    }
    T::gemm(1, nout, nin, T::one(), grad_out, nout, 1, weight, 1, nout, T::zero(), grad_in, nin, 1);
    (dw, grad_out.to_vec())
}
