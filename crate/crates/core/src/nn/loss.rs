use alloc::format;
use alloc::vec::Vec;

use crate::{math, Error, Result, Scalar, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax − onehot) / B`.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    logits.expect_ndim("cross_entropy_loss", 2)?;
    let (b, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != b {
        return Err(Error::shape("cross_entropy_loss", format!("{} labels for {} rows", labels.len(), b)));
    }
    if b == 0 {
        return Err(Error::Empty("cross_entropy_loss batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(b * k);
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| math::exp(v.as_f64() - max)).collect();
        let z: f64 = exps.iter().sum();
        total += math::ln(z) + max - row[y].as_f64();
        for (j, e) in exps.iter().enumerate() {
            let p = e / z - if j == y { 1.0 } else { 0.0 };
            grad.push(T::of(p / b as f64));
        }
    }
    Ok((total / b as f64, Tensor::from_vec(&[b, k], grad)?))
}
