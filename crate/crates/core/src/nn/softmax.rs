use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `logits [n,K]` and the mean cross-entropy against
/// `labels`. The loss uses the log-sum-exp form so it stays finite even when
/// a probability underflows.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let [n, k] = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::mismatch("softmax_cross_entropy labels", &[n], &[labels.len()]));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut loss = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        if label >= k {
            return Err(Error::param(format!("label {label} out of range for {k} classes")));
        }
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = probs.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total += e;
            probs.push(e);
        }
        for p in &mut probs[start..] {
            *p = *p / total;
        }
        loss += total.as_f64().ln() - (row[label] - max).as_f64();
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "cross-entropy loss".into(),
            index: 0,
        });
    }
    Ok((loss, Tensor::from_parts(vec![n, k], probs)))
}

/// `d loss / d logits = (probs - onehot(labels)) / n`.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    let [n, k] = probs.dims2()?;
    if labels.len() != n {
        return Err(Error::mismatch("softmax_cross_entropy_backward labels", &[n], &[labels.len()]));
    }
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut d = probs.data().to_vec();
    for (row, &label) in d.chunks_exact_mut(k).zip(labels) {
        if label >= k {
            return Err(Error::param(format!("label {label} out of range for {k} classes")));
        }
        row[label] -= T::one();
        for v in row {
            *v *= inv_n;
        }
    }
    Ok(Tensor::from_parts(vec![n, k], d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let logits = Tensor::<f64>::new(&[3, 10], 0.7).unwrap();
        let (loss, probs) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!(probs.data().iter().all(|&p| (p - 0.1).abs() < 1e-15));
    }

    #[test]
    fn shift_invariance() {
        let a = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., -1., 0.5, 4.]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 3], vec![101., 102., 103., -6., -4.5, -1.]).unwrap();
        let (la, pa) = softmax_cross_entropy(&a, &[2, 0]).unwrap();
        let (lb, pb) = softmax_cross_entropy(&b, &[2, 0]).unwrap();
        assert!((la - lb).abs() < 1e-12);
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_sum_to_one_and_gradient_rows_to_zero() {
        let logits = Tensor::<f32>::from_vec(&[2, 4], vec![3., -2., 0.1, 8., 0., 0., 1., -1.]).unwrap();
        let (_, probs) = softmax_cross_entropy(&logits, &[1, 2]).unwrap();
        for row in probs.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        let d = softmax_cross_entropy_backward(&probs, &[1, 2]).unwrap();
        for row in d.data().chunks(4) {
            assert!(row.iter().sum::<f32>().abs() < 1e-6);
        }
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let probs = Tensor::<f64>::from_vec(&[1, 3], vec![0., 1., 0.]).unwrap();
        let d = softmax_cross_entropy_backward(&probs, &[1]).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f64>::zeros(&[1, 3]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[3]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0, 1]).is_err());
    }
}
