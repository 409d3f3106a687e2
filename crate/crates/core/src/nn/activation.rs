use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Passes `dy` where `x > 0`. The gradient at exactly zero is zero.
///
/// `x` may be either the ReLU input or its output; both are positive at
/// the same positions.
pub fn relu_backward<T: Scalar>(dy: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.shape() != x.shape() {
        return Err(Error::mismatch("relu_backward", x.shape(), dy.shape()));
    }
    let data = dy
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}
