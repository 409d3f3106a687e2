use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 2x2, stride 2 max pooling. Returns the pooled tensor and, for every
/// output element, the flat index into `x` of the maximum it took. Ties go
/// to the first maximum in row-major order within the block.
pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "2x2 max pooling needs even height and width".into(),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let top = base + 2 * i * w + 2 * j;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if data[cand] > data[best] {
                        best = cand;
                    }
                }
                y.push(data[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], y), idx))
}

/// Routes each upstream value to the input cell recorded in `idx`.
pub fn maxpool2x2_backward<T: Scalar>(
    dy: &Tensor<T>,
    idx: &[usize],
    in_shape: &[usize],
) -> Result<Tensor<T>> {
    let [n, c, h, w] = match *in_shape {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::mismatch("maxpool2x2_backward", &[0, 0, 0, 0], in_shape)),
    };
    let expected = [n, c, h / 2, w / 2];
    if h % 2 != 0 || w % 2 != 0 || dy.shape() != expected {
        return Err(Error::mismatch("maxpool2x2_backward", &expected, dy.shape()));
    }
    if idx.len() != dy.len() {
        return Err(Error::mismatch("maxpool2x2_backward indices", &[dy.len()], &[idx.len()]));
    }
    let len = n * c * h * w;
    let mut dx = vec![T::zero(); len];
    for (&i, &g) in idx.iter().zip(dy.data()) {
        if i >= len {
            return Err(Error::InvalidShape {
                shape: in_shape.to_vec(),
                reason: format!("argmax index {i} out of range"),
            });
        }
        dx[i] += g;
    }
    Ok(Tensor::from_parts(in_shape.to_vec(), dx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_block_max() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn ties_take_top_left() {
        let x = Tensor::<f64>::new(&[1, 2, 4, 4], 3.0).unwrap();
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
        assert_eq!(&idx[..4], &[0, 2, 8, 10]);
        assert_eq!(&idx[4..], &[16, 18, 24, 26]);
    }

    #[test]
    fn output_is_a_quarter() {
        let x = Tensor::<f32>::zeros(&[3, 5, 6, 8]).unwrap();
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 5, 3, 4]);
        assert_eq!(4 * y.len(), x.len());
    }

    #[test]
    fn odd_extent_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]).unwrap();
        assert!(matches!(maxpool2x2_forward(&x), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn backward_routes_and_conserves() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 4], vec![1., 5., 0., 2., 3., 4., 7., 6.]).unwrap();
        let (_, idx) = maxpool2x2_forward(&x).unwrap();
        let dy = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![10., -2.]).unwrap();
        let dx = maxpool2x2_backward(&dy, &idx, x.shape()).unwrap();
        assert_eq!(dx.data(), &[0., 10., 0., 0., 0., 0., -2., 0.]);
        assert_eq!(dx.sum(), dy.sum());

        let zero = Tensor::<f64>::zeros(&[1, 1, 1, 2]).unwrap();
        assert!(maxpool2x2_backward(&zero, &idx, x.shape()).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(maxpool2x2_backward(&dy, &idx[..1], x.shape()).is_err());
        assert!(maxpool2x2_backward(&dy, &idx, &[1, 1, 4, 4]).is_err());
    }
}
