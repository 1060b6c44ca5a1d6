use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::init::kaiming_normal;
use crate::rng::Rng;
use crate::scalar::{gemm, MatRef};
use crate::{Error, Result, Scalar, Tensor};

/// Spatial output size of a convolution, or `None` if the window does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// 2-D convolution (cross-correlation) with square kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T = f64> {
    /// `[out_ch, in_ch, k, k]`
    pub weight: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

/// im2col buffer kept from a training forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    input_shape: [usize; 4],
    out_hw: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    /// Absent when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        weight.expect_ndim("Conv2d::new", 4)?;
        let (o, k, k2) = (weight.dim(0), weight.dim(2), weight.dim(3));
        if k != k2 || k == 0 {
            return Err(Error::shape("Conv2d::new", format!("kernel must be square and non-empty, got {:?}", weight.shape())));
        }
        if stride == 0 {
            return Err(Error::invalid("conv stride must be >= 1"));
        }
        bias.expect_shape("Conv2d::new bias", &[o])?;
        Ok(Conv2d { weight, bias, stride, padding })
    }

    /// Kaiming-initialized weights, zero bias.
    pub fn kaiming(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, rng: &mut Rng) -> Result<Self> {
        let weight = kaiming_normal(&[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, rng);
        Self::new(weight, Tensor::zeros(&[out_ch]), stride, padding)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel();
        Some((conv_output_size(h, k, self.stride, self.padding)?, conv_output_size(w, k, self.stride, self.padding)?))
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<([usize; 4], (usize, usize))> {
        input.expect_ndim("conv2d_forward", 4)?;
        let s = input.shape();
        let shape = [s[0], s[1], s[2], s[3]];
        if shape[1] != self.in_channels() {
            return Err(Error::shape(
                "conv2d_forward",
                format!("input has {} channels, kernel expects {}", shape[1], self.in_channels()),
            ));
        }
        let out = self.output_hw(shape[2], shape[3]).ok_or_else(|| {
            Error::shape("conv2d_forward", format!("input {}x{} smaller than kernel {}", shape[2], shape[3], self.kernel()))
        })?;
        Ok((shape, out))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(input)?.0)
    }

    /// Forward pass that also returns the im2col buffer for [`Conv2d::backward`].
    pub fn forward_train(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (shape, (oh, ow)) = self.check_input(input)?;
        let cols = self.im2col(input.data(), shape, oh, ow);
        let out = self.apply_cols(&cols, shape[0], oh, ow);
        Ok((out, ConvCache { cols, input_shape: shape, out_hw: (oh, ow) }))
    }

    fn im2col(&self, input: &[T], [b, c, h, w]: [usize; 4], oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel();
        let (s, p) = (self.stride, self.padding);
        let ncols = b * oh * ow;
        let mut cols = vec![T::zero(); c * k * k * ncols];
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                    for bi in 0..b {
                        let plane = &input[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * s + ki) as isize - p as isize;
                            let dst = &mut dst_row[(bi * oh + oy) * ow..(bi * oh + oy + 1) * ow];
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                            if p == 0 {
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = src[ox * s + kj];
                                }
                            } else {
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if ix >= 0 && ix < w as isize {
                                        *d = src[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn apply_cols(&self, cols: &[T], b: usize, oh: usize, ow: usize) -> Tensor<T> {
        let o = self.out_channels();
        let ckk = self.weight.len() / o;
        let hw = oh * ow;
        let mut mat = vec![T::zero(); o * b * hw];
        gemm(
            T::one(),
            MatRef::rows(self.weight.data(), o, ckk),
            MatRef::rows(cols, ckk, b * hw),
            T::zero(),
            &mut mat,
        );
        let mut out = Tensor::zeros(&[b, o, oh, ow]);
        let bias = self.bias.data();
        let data = out.data_mut();
        for oc in 0..o {
            let row = &mat[oc * b * hw..(oc + 1) * b * hw];
            for bi in 0..b {
                let dst = &mut data[(bi * o + oc) * hw..(bi * o + oc + 1) * hw];
                for (d, &v) in dst.iter_mut().zip(&row[bi * hw..(bi + 1) * hw]) {
                    *d = v + bias[oc];
                }
            }
        }
        out
    }

    pub fn backward(&self, cache: &ConvCache<T>, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<ConvGrads<T>> {
        let [b, c, h, w] = cache.input_shape;
        let (oh, ow) = cache.out_hw;
        let o = self.out_channels();
        grad_out.expect_shape("Conv2d::backward", &[b, o, oh, ow])?;
        let hw = oh * ow;
        let k = self.kernel();
        let ckk = c * k * k;

        // [B, O, HW] -> [O, B*HW]
        let mut gmat = vec![T::zero(); o * b * hw];
        let mut gbias = vec![T::zero(); o];
        let g = grad_out.data();
        for bi in 0..b {
            for oc in 0..o {
                let src = &g[(bi * o + oc) * hw..(bi * o + oc + 1) * hw];
                gmat[oc * b * hw + bi * hw..oc * b * hw + (bi + 1) * hw].copy_from_slice(src);
                let mut acc = T::zero();
                for &v in src {
                    acc = acc + v;
                }
                gbias[oc] = gbias[oc] + acc;
            }
        }

        let mut gw = vec![T::zero(); o * ckk];
        gemm(
            T::one(),
            MatRef::rows(&gmat, o, b * hw),
            MatRef::rows(&cache.cols, ckk, b * hw).t(),
            T::zero(),
            &mut gw,
        );

        let input = if need_input_grad {
            let mut gcols = vec![T::zero(); ckk * b * hw];
            gemm(
                T::one(),
                MatRef::rows(self.weight.data(), o, ckk).t(),
                MatRef::rows(&gmat, o, b * hw),
                T::zero(),
                &mut gcols,
            );
            Some(Tensor::from_vec(&[b, c, h, w], self.col2im(&gcols, cache.input_shape, oh, ow))?)
        } else {
            None
        };

        Ok(ConvGrads {
            weight: Tensor::from_vec(self.weight.shape(), gw)?,
            bias: Tensor::from_vec(&[o], gbias)?,
            input,
        })
    }

    fn col2im(&self, cols: &[T], [b, c, h, w]: [usize; 4], oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel();
        let (s, p) = (self.stride, self.padding);
        let ncols = b * oh * ow;
        let mut out = vec![T::zero(); b * c * h * w];
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let src_row = &cols[row * ncols..(row + 1) * ncols];
                    for bi in 0..b {
                        let plane = &mut out[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * s + ki) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &src_row[(bi * oh + oy) * ow..(bi * oh + oy + 1) * ow];
                            let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                            for (ox, &v) in src.iter().enumerate() {
                                let ix = (ox * s + kj) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[ix as usize] = dst[ix as usize] + v;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
