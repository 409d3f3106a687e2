//! Patch extraction for 3x3, stride 1, zero-pad 1 convolution.
//!
//! Rows of the column matrix are ordered (channel, kernel row, kernel col)
//! and columns (sample, output row, output col), so for a batch
//! `[n,c,h,w]` the matrix is `[c*9, n*h*w]` and sample `s` owns columns
//! `s*h*w .. (s+1)*h*w`.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub(crate) const KERNEL: usize = 3;
pub(crate) const TAPS: usize = KERNEL * KERNEL;

pub fn im2col<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let hw = h * w;
    let cols = n * hw;
    let mut out = vec![T::zero(); c * TAPS * cols];
    for s in 0..n {
        let sample = &x.data()[s * c * hw..(s + 1) * c * hw];
        im2col_into(sample, c, h, w, &mut out, cols, s * hw);
    }
    Ok(Tensor::from_parts(vec![c * TAPS, cols], out))
}

/// Adjoint of [`im2col`]: scatter-adds every column back onto the image
/// positions it was read from.
pub fn col2im<T: Scalar>(cols: &Tensor<T>, out_shape: [usize; 4]) -> Result<Tensor<T>> {
    let [n, c, h, w] = out_shape;
    if out_shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: out_shape.to_vec(),
            reason: "every extent must be at least 1".into(),
        });
    }
    let expected = [c * TAPS, n * h * w];
    if cols.shape() != expected {
        return Err(Error::mismatch("col2im", &expected, cols.shape()));
    }
    let hw = h * w;
    let mut out = vec![T::zero(); n * c * hw];
    for s in 0..n {
        let sample = &mut out[s * c * hw..(s + 1) * c * hw];
        col2im_into(cols.data(), c, h, w, n * hw, s * hw, sample);
    }
    Ok(Tensor::from_parts(out_shape.to_vec(), out))
}

/// Writes the patches of one `[c,h,w]` sample into `out`, a row-major matrix
/// with `row_stride` columns, starting at column `col_offset`. Every entry of
/// the sample's column block is overwritten.
pub(crate) fn im2col_into<T: Scalar>(
    sample: &[T],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [T],
    row_stride: usize,
    col_offset: usize,
) {
    debug_assert_eq!(sample.len(), c * h * w);
    for ch in 0..c {
        let plane = &sample[ch * h * w..(ch + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * TAPS + ky * KERNEL + kx) * row_stride + col_offset;
                let dst = &mut out[row..row + h * w];
                for i in 0..h {
                    let dst_row = &mut dst[i * w..(i + 1) * w];
                    let src_i = i + ky;
                    if src_i < 1 || src_i > h {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[(src_i - 1) * w..src_i * w];
                    // Output column j reads source column j + kx - 1.
                    match kx {
                        0 => {
                            dst_row[0] = T::zero();
                            dst_row[1..].copy_from_slice(&src_row[..w - 1]);
                        }
                        1 => dst_row.copy_from_slice(src_row),
                        _ => {
                            dst_row[..w - 1].copy_from_slice(&src_row[1..]);
                            dst_row[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates the column block of one sample back onto `sample` (`+=`).
pub(crate) fn col2im_into<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    row_stride: usize,
    col_offset: usize,
    sample: &mut [T],
) {
    debug_assert_eq!(sample.len(), c * h * w);
    for ch in 0..c {
        let plane = &mut sample[ch * h * w..(ch + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * TAPS + ky * KERNEL + kx) * row_stride + col_offset;
                let src = &cols[row..row + h * w];
                for i in 0..h {
                    let src_i = i + ky;
                    if src_i < 1 || src_i > h {
                        continue;
                    }
                    let src_row = &src[i * w..(i + 1) * w];
                    let dst_row = &mut plane[(src_i - 1) * w..src_i * w];
                    match kx {
                        0 => {
                            for (d, &v) in dst_row[..w - 1].iter_mut().zip(&src_row[1..]) {
                                *d += v;
                            }
                        }
                        1 => {
                            for (d, &v) in dst_row.iter_mut().zip(src_row) {
                                *d += v;
                            }
                        }
                        _ => {
                            for (d, &v) in dst_row[1..].iter_mut().zip(&src_row[..w - 1]) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}
