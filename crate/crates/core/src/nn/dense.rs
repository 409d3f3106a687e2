use crate::error::{Error, Result};
use crate::tensor::{gemm, transpose_into, Scalar, Tensor};

fn check<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [n, fan_in] = x.dims2()?;
    let [w_in, out] = w.dims2()?;
    if w_in != fan_in {
        return Err(Error::mismatch("dense weights", &[fan_in, out], w.shape()));
    }
    Ok((n, fan_in, out))
}

/// `y = x w + b` for `x [n,in]`, `w [in,out]`, `b [out]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fan_in, out) = check(x, w)?;
    if b.shape() != [out] {
        return Err(Error::mismatch("dense bias", &[out], b.shape()));
    }
    let mut y = vec![T::zero(); n * out];
    gemm(n, fan_in, out, x.data(), w.data(), &mut y);
    for row in y.chunks_exact_mut(out) {
        for (v, &bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    let y = Tensor::from_parts(vec![n, out], y);
    y.check_finite("dense output")?;
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, fan_in, out) = check(x, w)?;
    if dy.shape() != [n, out] {
        return Err(Error::mismatch("dense_backward dy", &[n, out], dy.shape()));
    }
    let mut x_t = vec![T::zero(); fan_in * n];
    transpose_into(x.data(), n, fan_in, &mut x_t);
    let mut dw = vec![T::zero(); fan_in * out];
    gemm(fan_in, n, out, &x_t, dy.data(), &mut dw);

    let mut w_t = vec![T::zero(); out * fan_in];
    transpose_into(w.data(), fan_in, out, &mut w_t);
    let mut dx = vec![T::zero(); n * fan_in];
    gemm(n, out, fan_in, dy.data(), &w_t, &mut dx);

    let mut db = vec![T::zero(); out];
    for row in dy.data().chunks_exact(out) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(DenseGrads {
        dx: Tensor::from_parts(vec![n, fan_in], dx),
        dw: Tensor::from_parts(vec![fan_in, out], dw),
        db: Tensor::from_parts(vec![out], db),
    })
}
