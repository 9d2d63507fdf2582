//! Forward kernels shared by the tape and the plain tensor API.

use super::{Result, Tensor, TensorError};

/// A strided read-only matrix view over a flat buffer.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    row_stride: usize,
    col_stride: usize,
}

impl<'a> View<'a> {
    /// The matrix stored row-major with `cols` columns.
    pub(crate) fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of the row-major matrix with `cols` columns.
    pub(crate) fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.row_stride + (cols - 1) * self.col_stride < self.data.len()
    }
}

/// `out = a · b + beta · out`, with `out` row-major `m × n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View, b: View, out: &mut [f64], beta: f64) {
    assert!(a.fits(m, k) && b.fits(k, n) && out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: the bounds of all three operands were checked above, and `out`
    // is an exclusive borrow disjoint from the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        (&[m, k], &[k2, n]) if k == k2 => Ok((m, k, n)),
        _ => Err(TensorError::Shape {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        }),
    }
}

pub(crate) fn batch_matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (a, b) {
        (&[g, m, k], &[g2, k2, n]) if g == g2 && k == k2 => Ok((g, m, k, n)),
        _ => Err(TensorError::Shape {
            op: "batch_matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        }),
    }
}

/// Reference triple-loop product of two rank-2 tensors.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims(a.shape(), b.shape())?;
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out.data_mut()[i * n + j] = acc;
        }
    }
    Ok(out)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes so that output axis `i` is input axis `axes[i]`.
pub(crate) fn permute(t: &Tensor, axes: &[usize]) -> Tensor {
    let in_shape = t.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(t.len());
    let mut idx = vec![0usize; out_shape.len()];
    let src = t.data();
    for _ in 0..t.len() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor {
        shape: out_shape,
        data: out,
    }
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_extents(x.shape(), axis);
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let at = |j: usize| base + j * inner;
            let max = (0..len).map(|j| data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (data[at(j)] - max).exp();
                data[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                data[at(j)] /= total;
            }
        }
    }
    out
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh approximation of the Gaussian error linear unit.
pub(crate) fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Geometry of a same-padded stride-1 convolution over NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    pub(crate) fn cols(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// Calls `f(column_row, column_index, input_offset)` for every in-bounds tap.
    pub(crate) fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let pad = (self.kernel / 2) as isize;
        let (h, w, c, k) = (self.height, self.width, self.channels, self.kernel);
        for b in 0..self.batch {
            for y in 0..h {
                for x in 0..w {
                    let row = (b * h + y) * w + x;
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = x as isize + kx as isize - pad;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let src = ((b * h + sy as usize) * w + sx as usize) * c;
                            let col = (ky * k + kx) * c;
                            for ch in 0..c {
                                f(row, col + ch, src + ch);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_round_trips() {
        let t = Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let axes = [2, 0, 1];
        let p = permute(&t, &axes);
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), t.at(&[1, 2, 3]));
        assert_eq!(permute(&p, &inverse_axes(&axes)), t);
    }

    #[test]
    fn softmax_along_middle_axis() {
        let t = Tensor::new(&[2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let s = softmax(&t, 1);
        for o in 0..2 {
            for i in 0..2 {
                let total: f64 = (0..3).map(|j| s.at(&[o, j, i])).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_with_transposed_views() {
        // a is 2x3, so aᵀ·a is 3x3
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = vec![0.0; 9];
        gemm(3, 2, 3, View::transposed(&a, 3), View::row_major(&a, 3), &mut out, 0.0);
        assert_eq!(out, vec![17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
