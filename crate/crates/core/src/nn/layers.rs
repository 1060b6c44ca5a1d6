use alloc::format;
use alloc::vec;

use super::init::kaiming_normal;
use crate::rng::Rng;
use crate::scalar::{gemm, MatRef};
use crate::{Error, Result, Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU backward, gated on the forward input.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape("relu_backward", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Non-overlapping `k × k` mean pooling; trailing rows/columns that do not
/// fill a window are dropped.
pub fn avgpool2d<T: Scalar>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    input.expect_ndim("avgpool2d", 4)?;
    let s = input.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if k == 0 || h < k || w < k {
        return Err(Error::shape("avgpool2d", format!("window {k} does not fit {h}x{w}")));
    }
    let (oh, ow) = (h / k, w / k);
    let inv = T::of(1.0 / (k * k) as f64);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let x = input.data();
    let y = out.data_mut();
    for p in 0..b * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        acc = acc + x[p * h * w + (oy * k + dy) * w + ox * k + dx];
                    }
                }
                y[p * oh * ow + oy * ow + ox] = acc * inv;
            }
        }
    }
    Ok(out)
}

pub fn avgpool2d_backward<T: Scalar>(input_shape: &[usize], k: usize, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (h / k, w / k);
    grad_out.expect_shape("avgpool2d_backward", &[b, c, oh, ow])?;
    let inv = T::of(1.0 / (k * k) as f64);
    let mut dx = Tensor::zeros(input_shape);
    let g = grad_out.data();
    let d = dx.data_mut();
    for p in 0..b * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g[p * oh * ow + oy * ow + ox] * inv;
                for dy in 0..k {
                    for dxx in 0..k {
                        d[p * h * w + (oy * k + dy) * w + ox * k + dxx] = v;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Fully connected layer, `y = x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = f64> {
    /// `[out, in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        weight.expect_ndim("Linear::new", 2)?;
        bias.expect_shape("Linear::new bias", &[weight.dim(0)])?;
        Ok(Linear { weight, bias })
    }

    pub fn kaiming(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        Self::new(kaiming_normal(&[outputs, inputs], inputs, rng), Tensor::zeros(&[outputs]))
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        input.expect_ndim("fc_forward", 2)?;
        let (b, i) = (input.dim(0), input.dim(1));
        if i != self.in_features() {
            return Err(Error::shape("fc_forward", format!("input width {i}, layer expects {}", self.in_features())));
        }
        let o = self.out_features();
        let mut out = vec![T::zero(); b * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            T::one(),
            MatRef::rows(input.data(), b, i),
            MatRef::rows(self.weight.data(), o, i).t(),
            T::one(),
            &mut out,
        );
        Tensor::from_vec(&[b, o], out)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LinearGrads<T>> {
        let (b, i, o) = (input.dim(0), self.in_features(), self.out_features());
        grad_out.expect_shape("Linear::backward", &[b, o])?;
        let mut gw = vec![T::zero(); o * i];
        gemm(T::one(), MatRef::rows(grad_out.data(), b, o).t(), MatRef::rows(input.data(), b, i), T::zero(), &mut gw);
        let mut gb = vec![T::zero(); o];
        for row in grad_out.data().chunks(o) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        let mut gx = vec![T::zero(); b * i];
        gemm(T::one(), MatRef::rows(grad_out.data(), b, o), MatRef::rows(self.weight.data(), o, i), T::zero(), &mut gx);
        Ok(LinearGrads {
            weight: Tensor::from_vec(&[o, i], gw)?,
            bias: Tensor::from_vec(&[o], gb)?,
            input: Tensor::from_vec(&[b, i], gx)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let t = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn avgpool_is_window_mean() {
        let t = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = avgpool2d(&t, 2).unwrap();
        assert_eq!(p.shape(), &[1, 1, 1, 1]);
        assert_eq!(p.data(), &[2.5]);
    }

    #[test]
    fn identity_fc_is_identity() {
        let mut w = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let fc = Linear::new(w, Tensor::zeros(&[3])).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 7.0, -1.0]).unwrap();
        assert_eq!(fc.forward(&x).unwrap(), x);
    }

    #[test]
    fn fc_rejects_wrong_width() {
        let fc = Linear::<f64>::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[2])).unwrap();
        assert!(fc.forward(&Tensor::zeros(&[1, 4])).is_err());
        assert!(Linear::<f64>::new(Tensor::zeros(&[2, 3]), Tensor::zeros(&[3])).is_err());
    }
}
