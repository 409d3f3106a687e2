//! Row-major matrix multiply.
//!
//! Every output element is accumulated as
//! `((0 + a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...`, strictly left to right over
//! the inner dimension, with a separate multiply and add (never fused). The
//! vector width chosen at runtime only changes how many `j` are processed at
//! once, so results are bit-identical across instruction sets and match a
//! scalar triple loop exactly.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

const MR: usize = 4;
const NR: usize = 32;

/// `a [m,k] x b [k,n] -> [m,n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, k] = a.dims2()?;
    let [kb, n] = b.dims2()?;
    if k != kb {
        return Err(Error::mismatch("matmul", &[k, n], &[kb, n]));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, a.data(), b.data(), &mut out);
    let out = Tensor::from_parts(vec![m, n], out);
    out.check_finite("matmul output")?;
    Ok(out)
}

/// Writes `a [m,k] x b [k,n]` into `c [m,n]`, overwriting it.
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx512(m, k, n, a, b, c) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            unsafe { gemm_avx2(m, k, n, a, b, c) };
            return;
        }
    }
    gemm_portable(m, k, n, a, b, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_avx512<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_portable(m, k, n, a, b, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_portable(m, k, n, a, b, c)
}

#[inline(always)]
fn gemm_portable<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let full_cols = n - n % NR;
    for j0 in (0..full_cols).step_by(NR) {
        let mut i0 = 0;
        while i0 + MR <= m {
            block_full(k, n, a, b, c, i0, j0);
            i0 += MR;
        }
        for i in i0..m {
            row_full(k, n, a, b, c, i, j0);
        }
    }
    if full_cols < n {
        for i in 0..m {
            row_tail(k, n, a, b, c, i, full_cols);
        }
    }
}

#[inline(always)]
fn block_full<T: Scalar>(k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], i0: usize, j0: usize) {
    let mut acc = [[T::zero(); NR]; MR];
    let a_rows: [&[T]; MR] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
    for p in 0..k {
        let brow: &[T; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
        for r in 0..MR {
            let av = a_rows[r][p];
            let acc_r = &mut acc[r];
            for j in 0..NR {
                acc_r[j] += av * brow[j];
            }
        }
    }
    for (r, acc_r) in acc.iter().enumerate() {
        c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(acc_r);
    }
}

#[inline(always)]
fn row_full<T: Scalar>(k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], i: usize, j0: usize) {
    let mut acc = [T::zero(); NR];
    let a_row = &a[i * k..(i + 1) * k];
    for (p, &av) in a_row.iter().enumerate() {
        let brow: &[T; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
        for j in 0..NR {
            acc[j] += av * brow[j];
        }
    }
    c[i * n + j0..i * n + j0 + NR].copy_from_slice(&acc);
}

#[inline(always)]
fn row_tail<T: Scalar>(k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], i: usize, j0: usize) {
    let width = n - j0;
    let mut acc = [T::zero(); NR];
    let a_row = &a[i * k..(i + 1) * k];
    for (p, &av) in a_row.iter().enumerate() {
        let brow = &b[p * n + j0..p * n + n];
        for (acc_j, &bv) in acc[..width].iter_mut().zip(brow) {
            *acc_j += av * bv;
        }
    }
    c[i * n + j0..i * n + n].copy_from_slice(&acc[..width]);
}

/// Transposes the `rows x cols` matrix `src` into `dst` (`cols x rows`).
pub(crate) fn transpose_into<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    assert_eq!(src.len(), rows * cols);
    assert_eq!(dst.len(), rows * cols);
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn identity_times_matrix() {
        let id = Tensor::<f64>::from_vec(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![3., -1., 2.5, 4.]).unwrap();
        assert_eq!(matmul(&id, &x).unwrap(), x);
    }

    #[test]
    fn hand_example() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 1], vec![0., 1.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[2., 4.]);
    }

    #[test]
    fn inner_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[4, 2]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn blocked_paths_match_scalar_loop_bitwise() {
        // Sizes straddle the MR/NR block edges.
        let mut rng = Rng::new(11);
        for &(m, k, n) in &[(1, 1, 1), (4, 7, 32), (5, 3, 33), (9, 17, 70), (3, 40, 31)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &a, &b, &mut c);
            assert_eq!(c, naive(m, k, n, &a, &b), "m={m} k={k} n={n}");
        }
    }
}
