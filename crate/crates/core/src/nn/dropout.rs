//! Inverted dropout: kept activations are scaled by `1/(1-p)` during
//! training so inference is the identity.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropoutMode {
    /// Each activation is dropped independently.
    Regular,
    /// Whole feature maps are dropped: one draw per (sample, channel).
    Spatial,
}

impl fmt::Display for DropoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropoutMode::Regular => "regular",
            DropoutMode::Spatial => "spatial",
        })
    }
}

impl FromStr for DropoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(DropoutMode::Regular),
            "spatial" => Ok(DropoutMode::Spatial),
            other => Err(Error::param(format!("unknown dropout mode `{other}`"))),
        }
    }
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Draws a mask with entries in `{0, 1/(1-p)}`. Regular mode consumes one
/// uniform per element in flat order; spatial mode one per (sample,
/// channel) pair.
pub fn dropout_mask<T: Scalar>(
    shape: &[usize],
    rate: f64,
    mode: DropoutMode,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    check_rate(rate)?;
    let len: usize = shape.iter().product();
    if rate == 0.0 {
        return Tensor::new(shape, T::one());
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let data = match (mode, shape) {
        (DropoutMode::Regular, _) => (0..len)
            .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
            .collect(),
        (DropoutMode::Spatial, &[n, c, h, w]) => {
            let mut data = Vec::with_capacity(len);
            for _ in 0..n * c {
                let v = if rng.bernoulli(rate) { T::zero() } else { keep };
                data.extend(std::iter::repeat_n(v, h * w));
            }
            data
        }
        (DropoutMode::Spatial, _) => {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "spatial dropout needs a 4-D activation".into(),
            })
        }
    };
    Tensor::from_vec(shape, data)
}

/// Returns the dropped-out activations and the mask that produced them.
/// With `training == false` the output is `x` and the mask is all ones.
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    mode: DropoutMode,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_rate(rate)?;
    if mode == DropoutMode::Spatial {
        x.dims4()?;
    }
    if !training {
        return Ok((x.clone(), Tensor::new(x.shape(), T::one())?));
    }
    let mask = dropout_mask(x.shape(), rate, mode, rng)?;
    let y = apply_mask(x, &mask)?;
    Ok((y, mask))
}

pub fn dropout_backward<T: Scalar>(dy: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    apply_mask(dy, mask)
}

pub(crate) fn apply_mask<T: Scalar>(x: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != mask.shape() {
        return Err(Error::mismatch("dropout mask", mask.shape(), x.shape()));
    }
    let data = x.data().iter().zip(mask.data()).map(|(&v, &m)| v * m).collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}
