use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Mode;
use crate::{math, Error, Result, Scalar, Tensor};

/// Running-average decay λ in `μ̄ ← λμ̄ + (1-λ)μ_batch`.
pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;
pub const DEFAULT_BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization over `[B, C, H, W]` inputs.
///
/// Running statistics follow `μ̄ ← λμ̄ + (1-λ)μ_batch` and
/// `σ̄² ← λσ̄² + (1-λ)σ²_batch`, with the biased batch variance. The running
/// mean is exactly the quantity the NMD reference needs: a running average of
/// the per-channel mean of this layer's input over the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T = f64> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    momentum: f64,
    eps: f64,
    updates: u64,
}

#[derive(Debug, Clone)]
pub struct BnOutput<T> {
    pub output: Tensor<T>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: [usize; 4],
}

impl<T: Scalar> BatchNorm2d<T> {
    /// γ = 1, β = 0, μ̄ = 0, σ̄² = 1.
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::invalid(format!("batch-norm momentum must lie in (0, 1), got {momentum}")));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("batch-norm epsilon must be positive"));
        }
        Ok(BatchNorm2d {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum,
            eps,
            updates: 0,
        })
    }

    /// Rebuilds a layer from stored buffers (checkpoint loading).
    pub fn from_parts(
        gamma: Tensor<T>,
        beta: Tensor<T>,
        running_mean: Tensor<T>,
        running_var: Tensor<T>,
        momentum: f64,
        eps: f64,
        updates: u64,
    ) -> Result<Self> {
        let mut bn = Self::new(gamma.len(), momentum, eps)?;
        let c = gamma.len();
        for (name, t) in [("beta", &beta), ("running_mean", &running_mean), ("running_var", &running_var)] {
            if t.shape() != [c] {
                return Err(Error::shape("BatchNorm2d::from_parts", format!("{name} has shape {:?}, expected [{c}]", t.shape())));
            }
        }
        if running_var.data().iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::invalid("running variance must be non-negative"));
        }
        bn.gamma = gamma;
        bn.beta = beta;
        bn.running_mean = running_mean;
        bn.running_var = running_var;
        bn.updates = updates;
        Ok(bn)
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Number of running-average updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn check(&self, input: &Tensor<T>) -> Result<[usize; 4]> {
        input.expect_ndim("batchnorm_forward", 4)?;
        let s = input.shape();
        if s[1] != self.channels() {
            return Err(Error::shape("batchnorm_forward", format!("input has {} channels, layer has {}", s[1], self.channels())));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Biased per-channel mean and variance over batch and spatial positions.
    pub fn batch_statistics(&self, input: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>)> {
        let [b, c, h, w] = self.check(input)?;
        let hw = h * w;
        let n = (b * hw) as f64;
        let x = input.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for bi in 0..b {
                for &v in &x[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                    s += v.as_f64();
                }
            }
            let m = s / n;
            let mut ss = 0.0;
            for bi in 0..b {
                for &v in &x[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                    let d = v.as_f64() - m;
                    ss += d * d;
                }
            }
            mean[ch] = m;
            var[ch] = ss / n;
        }
        if mean.iter().chain(&var).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch-norm batch statistics".into()));
        }
        Ok((mean, var))
    }

    /// The generic entry point: train mode normalizes with batch statistics
    /// and updates the running averages, eval mode uses the running averages.
    /// Batch statistics are returned in both modes.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<BnOutput<T>> {
        match mode {
            Mode::Train => Ok(self.forward_train(input)?.0),
            Mode::Eval => {
                let (batch_mean, batch_var) = self.batch_statistics(input)?;
                Ok(BnOutput { output: self.forward_eval(input)?, batch_mean, batch_var })
            }
        }
    }

    /// Training-mode normalization with a running-average update.
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<(BnOutput<T>, BnCache<T>)> {
        let out = self.normalize_with_batch_stats(input)?;
        self.update_running(&out.0.batch_mean, &out.0.batch_var);
        Ok(out)
    }

    /// Applies one running-average update from externally computed batch statistics.
    pub fn update_running(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let lambda = self.momentum;
        for (r, &m) in self.running_mean.data_mut().iter_mut().zip(batch_mean) {
            *r = T::of(lambda * r.as_f64() + (1.0 - lambda) * m);
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(batch_var) {
            *r = T::of(lambda * r.as_f64() + (1.0 - lambda) * v);
        }
        self.updates += 1;
    }

    /// Training-mode normalization that leaves the running averages alone.
    pub fn normalize_with_batch_stats(&self, input: &Tensor<T>) -> Result<(BnOutput<T>, BnCache<T>)> {
        let shape = self.check(input)?;
        let [b, c, h, w] = shape;
        if b * h * w < 2 {
            return Err(Error::invalid("train-mode batch norm needs at least 2 values per channel"));
        }
        let (batch_mean, batch_var) = self.batch_statistics(input)?;
        let hw = h * w;
        let inv_std: Vec<T> = batch_var.iter().map(|&v| T::of(1.0 / math::sqrt(v + self.eps))).collect();
        let mean_t: Vec<T> = batch_mean.iter().map(|&m| T::of(m)).collect();
        let mut xhat = vec![T::zero(); input.len()];
        let mut out = Tensor::zeros(input.shape());
        let (g, be) = (self.gamma.data(), self.beta.data());
        let x = input.data();
        let y = out.data_mut();
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                for ((xh, yo), &xi) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&x[r]) {
                    *xh = (xi - mean_t[ch]) * inv_std[ch];
                    *yo = g[ch] * *xh + be[ch];
                }
            }
        }
        Ok((BnOutput { output: out, batch_mean, batch_var }, BnCache { xhat, inv_std, shape }))
    }

    /// Eval-mode normalization with the running averages. Never mutates.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = self.check(input)?;
        let hw = h * w;
        let (g, be) = (self.gamma.data(), self.beta.data());
        let (rm, rv) = (self.running_mean.data(), self.running_var.data());
        let scale: Vec<T> = (0..c).map(|ch| g[ch] / (rv[ch] + T::of(self.eps)).sqrt()).collect();
        let shift: Vec<T> = (0..c).map(|ch| be[ch] - rm[ch] * scale[ch]).collect();
        let mut out = input.clone();
        let y = out.data_mut();
        for bi in 0..b {
            for ch in 0..c {
                for v in &mut y[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                    *v = *v * scale[ch] + shift[ch];
                }
            }
        }
        Ok(out)
    }

    /// Gradients of a training-mode forward: `(d_input, d_gamma, d_beta)`.
    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let [b, c, h, w] = cache.shape;
        grad_out.expect_shape("BatchNorm2d::backward", &cache.shape)?;
        let hw = h * w;
        let n = T::of((b * hw) as f64);
        let dy = grad_out.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                for (&d, &xh) in dy[r.clone()].iter().zip(&cache.xhat[r]) {
                    dgamma[ch] = dgamma[ch] + d * xh;
                    dbeta[ch] = dbeta[ch] + d;
                }
            }
        }
        // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
        let g = self.gamma.data();
        let mut dx = Tensor::zeros(&cache.shape);
        let out = dx.data_mut();
        for bi in 0..b {
            for ch in 0..c {
                let k = g[ch] * cache.inv_std[ch] / n;
                let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                for ((o, &d), &xh) in out[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&cache.xhat[r]) {
                    *o = k * (n * d - dbeta[ch] - xh * dgamma[ch]);
                }
            }
        }
        Ok((dx, Tensor::from_vec(&[c], dgamma)?, Tensor::from_vec(&[c], dbeta)?))
    }
}
