//! 3x3 same-padded convolution lowered to im2col + matmul, one sample at a
//! time so the column buffer stays cache sized.

use crate::error::{Error, Result};
use crate::tensor::{col2im_into, gemm, im2col_into, transpose_into, Scalar, Tensor};

const TAPS: usize = 9;

fn check_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<([usize; 4], usize)> {
    let [n, c, h, wd] = x.dims4()?;
    let [oc, wc, kh, kw] = w.dims4()?;
    if wc != c || kh != 3 || kw != 3 {
        return Err(Error::mismatch("conv2d weights", &[oc, c, 3, 3], w.shape()));
    }
    Ok(([n, c, h, wd], oc))
}

/// `y[n,o,i,j] = b[o] + sum_{c,u,v} w[o,c,u,v] * x_pad[n,c,i+u,j+v]` with one
/// pixel of zero padding, so `y` keeps the spatial size of `x`.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ([n, c, h, wd], oc) = check_shapes(x, w)?;
    if b.shape() != [oc] {
        return Err(Error::mismatch("conv2d bias", &[oc], b.shape()));
    }
    let hw = h * wd;
    let k = c * TAPS;
    let mut cols = vec![T::zero(); k * hw];
    let mut y = vec![T::zero(); n * oc * hw];
    for s in 0..n {
        im2col_into(&x.data()[s * c * hw..(s + 1) * c * hw], c, h, wd, &mut cols, hw, 0);
        let ys = &mut y[s * oc * hw..(s + 1) * oc * hw];
        gemm(oc, k, hw, w.data(), &cols, ys);
        for (plane, &bias) in ys.chunks_exact_mut(hw).zip(b.data()) {
            for v in plane {
                *v += bias;
            }
        }
    }
    let y = Tensor::from_parts(vec![n, oc, h, wd], y);
    y.check_finite("conv2d output")?;
    Ok(y)
}

/// Gradients of [`conv2d_forward`] with respect to its input, weights and
/// bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (dx, dw, db) = conv2d_backward_impl(x, w, dy, true)?;
    Ok(ConvGrads {
        dx: dx.expect("input gradient requested"),
        dw,
        db,
    })
}

/// Backward pass; skips the input gradient when `need_dx` is false (first
/// layer of a model).
pub(crate) fn conv2d_backward_impl<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let ([n, c, h, wd], oc) = check_shapes(x, w)?;
    if dy.shape() != [n, oc, h, wd] {
        return Err(Error::mismatch("conv2d_backward dy", &[n, oc, h, wd], dy.shape()));
    }
    let hw = h * wd;
    let k = c * TAPS;

    let mut db = vec![T::zero(); oc];
    for s in 0..n {
        for (o, plane) in dy.data()[s * oc * hw..(s + 1) * oc * hw].chunks_exact(hw).enumerate() {
            db[o] += plane.iter().fold(T::zero(), |acc, &v| acc + v);
        }
    }

    let mut w_t = vec![T::zero(); k * oc];
    transpose_into(w.data(), oc, k, &mut w_t);

    let mut cols = vec![T::zero(); k * hw];
    let mut cols_t = vec![T::zero(); hw * k];
    let mut dw_s = vec![T::zero(); oc * k];
    let mut dw = vec![T::zero(); oc * k];
    let mut dcols = vec![T::zero(); k * hw];
    let mut dx = if need_dx { vec![T::zero(); n * c * hw] } else { Vec::new() };

    for s in 0..n {
        let dys = &dy.data()[s * oc * hw..(s + 1) * oc * hw];
        im2col_into(&x.data()[s * c * hw..(s + 1) * c * hw], c, h, wd, &mut cols, hw, 0);
        transpose_into(&cols, k, hw, &mut cols_t);
        gemm(oc, hw, k, dys, &cols_t, &mut dw_s);
        for (acc, &v) in dw.iter_mut().zip(&dw_s) {
            *acc += v;
        }
        if need_dx {
            gemm(k, oc, hw, &w_t, dys, &mut dcols);
            col2im_into(&dcols, c, h, wd, hw, 0, &mut dx[s * c * hw..(s + 1) * c * hw]);
        }
    }

    let dx = need_dx.then(|| Tensor::from_parts(vec![n, c, h, wd], dx));
    Ok((
        dx,
        Tensor::from_parts(vec![oc, c, 3, 3], dw),
        Tensor::from_parts(vec![oc], db),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.normal()).collect()).unwrap()
    }

    fn direct(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let [n, c, h, wd] = x.dims4().unwrap();
        let oc = w.shape()[0];
        let mut y = vec![0.0; n * oc * h * wd];
        for s in 0..n {
            for o in 0..oc {
                for i in 0..h {
                    for j in 0..wd {
                        let mut acc = b.data()[o];
                        for ch in 0..c {
                            for u in 0..3 {
                                for v in 0..3 {
                                    let (si, sj) = (i as isize + u as isize - 1, j as isize + v as isize - 1);
                                    if si < 0 || sj < 0 || si >= h as isize || sj >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((o * c + ch) * 3 + u) * 3 + v]
                                        * x.data()[((s * c + ch) * h + si as usize) * wd + sj as usize];
                                }
                            }
                        }
                        y[((s * oc + o) * h + i) * wd + j] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(&[n, oc, h, wd], y).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = Rng::new(1);
        let x = random(&[2, 3, 5, 4], &mut rng);
        let mut w = Tensor::<f64>::zeros(&[3, 3, 3, 3]).unwrap();
        for o in 0..3 {
            w.data_mut()[((o * 3 + o) * 3 + 1) * 3 + 1] = 1.0;
        }
        let b = Tensor::zeros(&[3]).unwrap();
        assert_eq!(conv2d_forward(&x, &w, &b).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = Rng::new(2);
        let x = random(&[1, 2, 3, 3], &mut rng);
        let w = Tensor::<f64>::zeros(&[1, 2, 3, 3]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.75]).unwrap();
        let y = conv2d_forward(&x, &w, &b).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = Rng::new(3);
        let x = random(&[1, 2, 4, 4], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let got = conv2d_forward(&x, &w, &b).unwrap();
        let want = direct(&x, &w, &b);
        for (g, e) in got.data().iter().zip(want.data()) {
            assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0), "{g} vs {e}");
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]).unwrap();
        let w = Tensor::<f32>::zeros(&[3, 1, 3, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[3]).unwrap();
        assert!(matches!(conv2d_forward(&x, &w, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_upstream_and_sum_loss() {
        let mut rng = Rng::new(4);
        let x = random(&[2, 2, 3, 5], &mut rng);
        let w = random(&[4, 2, 3, 3], &mut rng);
        let zero = Tensor::<f64>::zeros(&[2, 4, 3, 5]).unwrap();
        let g = conv2d_backward(&x, &w, &zero).unwrap();
        assert!(g.dx.data().iter().chain(g.dw.data()).chain(g.db.data()).all(|&v| v == 0.0));

        let ones = Tensor::<f64>::new(&[2, 4, 3, 5], 1.0).unwrap();
        let g = conv2d_backward(&x, &w, &ones).unwrap();
        assert!(g.db.data().iter().all(|&v| v == 30.0));
    }
}
