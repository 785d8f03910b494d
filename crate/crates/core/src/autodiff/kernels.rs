//! Raw numeric kernels shared by the forward and backward passes.

use crate::scalar::Scalar;

/// Geometry of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output extent of a strided, zero padded window.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Unfolds `x` into a `[cin*kh*kw, oh*ow]` patch matrix.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_pixels();
    let mut cols = vec![T::zero(); g.patch_len() * p];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im_acc<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// In-place numerically stable softmax over consecutive rows of width `n`.
pub fn softmax_rows<T: Scalar>(data: &mut [T], n: usize) {
    for row in data.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.iter_mut().for_each(|v| *v -= max);
        T::exp_slice(row);
        let sum: T = row.iter().copied().sum();
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Accumulates the softmax input gradient: `dx += y * (dy - <dy, y>)` per row.
pub fn softmax_rows_backward<T: Scalar>(y: &[T], dy: &[T], dx: &mut [T], n: usize) {
    for ((yr, dyr), dxr) in y
        .chunks_exact(n)
        .zip(dy.chunks_exact(n))
        .zip(dx.chunks_exact_mut(n))
    {
        let dot: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d += yv * (g - dot);
        }
    }
}

/// Maps each element of a tensor with `lhs` shape to its broadcast source in `rhs`.
///
/// `rhs` is aligned to the trailing axes of `lhs`; each of its dims must match or be 1.
pub fn broadcast_index(lhs: &[usize], rhs: &[usize]) -> Option<Vec<usize>> {
    if rhs.len() > lhs.len() {
        return None;
    }
    let lead = lhs.len() - rhs.len();
    let mut rhs_strides = vec![0usize; lhs.len()];
    let mut stride = 1;
    for i in (0..rhs.len()).rev() {
        let (r, l) = (rhs[i], lhs[lead + i]);
        if r != l && r != 1 {
            return None;
        }
        rhs_strides[lead + i] = if r == 1 { 0 } else { stride };
        stride *= r;
    }
    let total: usize = lhs.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; lhs.len()];
    for _ in 0..total {
        map.push(idx.iter().zip(&rhs_strides).map(|(i, s)| i * s).sum());
        for ax in (0..lhs.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < lhs[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Some(map)
}
