//! The 4-layer batch-normalized ConvNet and single-pass activation statistics.
//!
//! Layer inventory of the built-in model (`valid` padding throughout, so a
//! 32×32 input composes to a 1×1 map before the classifier):
//!
//! | layer   | configuration              | output on 32×32 |
//! |---------|----------------------------|-----------------|
//! | Conv1   | 3 → 300, k = 4, s = 1      | 300 × 29 × 29   |
//! | Conv2   | 300 → 300, k = 4, s = 2    | 300 × 13 × 13   |
//! | Conv3   | 300 → 300, k = 4, s = 2    | 300 × 5 × 5     |
//! | Conv4   | 300 → 300, k = 3, s = 2    | 300 × 2 × 2     |
//! | AvgPool | k = 2                      | 300 × 1 × 1     |
//! | FC      | 300 → classes              |                 |
//!
//! Every conv is followed by batch norm and ReLU. Activation statistics are
//! tapped at each batch-norm *input*: the tensor whose per-channel mean the
//! running average μ̄ tracks during training.

mod train;

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::nn::{
    avgpool2d, avgpool2d_backward, relu, relu_backward, BatchNorm2d, BnCache, Conv2d, ConvCache, Linear,
    DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};
use crate::rng::substream;
use crate::{Error, Result, Scalar, Tensor};

pub use train::{train_classifier, train_classifier_with, EpochSummary, LrSchedule, TrainConfig, TrainReport};

pub const CONVNET4_WIDTH: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub blocks: Vec<BlockSpec>,
    pub pool: usize,
    pub num_classes: usize,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ConvNetConfig {
    /// The built-in 4-layer, 300-channel ConvNet on 3×32×32 inputs.
    pub fn convnet4(num_classes: usize) -> Self {
        Self::convnet4_with_width(num_classes, CONVNET4_WIDTH)
    }

    /// Same topology with a different channel width (small widths keep
    /// tests fast).
    pub fn convnet4_with_width(num_classes: usize, width: usize) -> Self {
        let block = |out_channels, kernel, stride| BlockSpec { out_channels, kernel, stride, padding: 0 };
        ConvNetConfig {
            in_channels: 3,
            input_size: 32,
            blocks: vec![block(width, 4, 1), block(width, 4, 2), block(width, 4, 2), block(width, 3, 2)],
            pool: 2,
            num_classes,
            batch_norm: true,
            bn_momentum: DEFAULT_BN_MOMENTUM,
            bn_eps: DEFAULT_BN_EPS,
        }
    }

    /// Spatial size after each block, and the pooled map size.
    pub fn spatial_sizes(&self) -> Result<(Vec<usize>, usize)> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.blocks.is_empty() || self.in_channels == 0 {
            return Err(Error::invalid("model needs at least one conv block and one input channel"));
        }
        let mut size = self.input_size;
        let mut sizes = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            if b.out_channels == 0 {
                return Err(Error::invalid(format!("block {} has zero channels", i + 1)));
            }
            size = crate::nn::conv_output_size(size, b.kernel, b.stride, b.padding)
                .ok_or_else(|| Error::invalid(format!("block {} does not fit a {}x{} input", i + 1, size, size)))?;
            sizes.push(size);
        }
        if self.pool == 0 || size < self.pool {
            return Err(Error::invalid(format!("pool window {} does not fit final {}x{} map", self.pool, size, size)));
        }
        Ok((sizes, size / self.pool))
    }

    pub fn fc_inputs(&self) -> Result<usize> {
        let (_, pooled) = self.spatial_sizes()?;
        Ok(self.blocks.last().map_or(0, |b| b.out_channels) * pooled * pooled)
    }
}

/// Maps global NMD channel ids to `(layer, channel)` pairs, layers in
/// forward order, channels contiguous within a layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelIndex {
    offsets: Vec<usize>,
}

impl ChannelIndex {
    pub fn new(channels_per_layer: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(channels_per_layer.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &c in channels_per_layer {
            acc += c;
            offsets.push(acc);
        }
        ChannelIndex { offsets }
    }

    pub fn layers(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        self.offsets[layer]..self.offsets[layer + 1]
    }

    pub fn channels_in(&self, layer: usize) -> usize {
        self.offsets[layer + 1] - self.offsets[layer]
    }

    /// `(layer, channel)` of global id `g`, both zero-based.
    pub fn locate(&self, g: usize) -> Option<(usize, usize)> {
        if g >= self.total() {
            return None;
        }
        let layer = self.offsets.partition_point(|&o| o <= g) - 1;
        Some((layer, g - self.offsets[layer]))
    }

    /// Two copies of this index back to back, for concatenated vectors.
    pub fn doubled(&self) -> Self {
        let per: Vec<usize> = (0..self.layers()).map(|l| self.channels_in(l)).collect();
        let mut both = per.clone();
        both.extend(per);
        ChannelIndex::new(&both)
    }

    /// Keeps `layer % modulus < k`: the first `k` layers of each copy.
    pub(crate) fn first_layers_mask(&self, k: usize, modulus: usize) -> Vec<bool> {
        (0..self.total())
            .map(|g| self.locate(g).map_or(false, |(l, _)| l % modulus < k))
            .collect()
    }
}

/// Per-channel first and second moments of the tapped activations,
/// averaged over examples and spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStats {
    pub per_channel_mean: Vec<f64>,
    pub per_channel_sqmean: Vec<f64>,
    pub batch_size: usize,
}

impl ActivationStats {
    pub fn channels(&self) -> usize {
        self.per_channel_mean.len()
    }

    /// Size-weighted average of several batches' statistics: the statistics
    /// of their concatenation.
    pub fn merge(parts: &[ActivationStats]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("ActivationStats::merge"))?;
        let c = first.channels();
        let total: usize = parts.iter().map(|p| p.batch_size).sum();
        if total == 0 {
            return Err(Error::Empty("ActivationStats::merge batch sizes"));
        }
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for p in parts {
            if p.channels() != c {
                return Err(Error::shape("ActivationStats::merge", format!("{} vs {} channels", p.channels(), c)));
            }
            let w = p.batch_size as f64 / total as f64;
            for g in 0..c {
                mean[g] += w * p.per_channel_mean[g];
                sq[g] += w * p.per_channel_sqmean[g];
            }
        }
        Ok(ActivationStats { per_channel_mean: mean, per_channel_sqmean: sq, batch_size: total })
    }
}

/// Biased batch mean/variance a batch-norm layer saw in a training-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T = f64> {
    pub conv: Conv2d<T>,
    pub bn: Option<BatchNorm2d<T>>,
}

/// A ConvNet with per-channel activation taps at every conv block.
///
/// Immutable during inference (`&self` everywhere) and `Sync`, so a
/// trained model can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet<T = f64> {
    config: ConvNetConfig,
    blocks: Vec<ConvBlock<T>>,
    fc: Linear<T>,
    channels: Arc<ChannelIndex>,
}

/// Fresh built-in ConvNet with Kaiming-initialized weights.
pub fn build_convnet4(num_classes: usize, seed: u64) -> Result<ConvNet> {
    ConvNet::build(ConvNetConfig::convnet4(num_classes), seed)
}

struct TrainPass<T> {
    logits: Tensor<T>,
    conv_caches: Vec<ConvCache<T>>,
    bn_caches: Vec<Option<BnCache<T>>>,
    pre_relu: Vec<Tensor<T>>,
    pool_input_shape: Vec<usize>,
    fc_input: Tensor<T>,
    bn_stats: Vec<BatchStats>,
    tap_stats: Vec<ActivationStats>,
}

impl<T: Scalar> ConvNet<T> {
    pub fn build(config: ConvNetConfig, seed: u64) -> Result<Self> {
        config.spatial_sizes()?;
        let mut rng = substream(seed, "init");
        let mut blocks = Vec::with_capacity(config.blocks.len());
        let mut in_ch = config.in_channels;
        for b in &config.blocks {
            let conv = Conv2d::kaiming(in_ch, b.out_channels, b.kernel, b.stride, b.padding, &mut rng)?;
            let bn = if config.batch_norm {
                Some(BatchNorm2d::new(b.out_channels, config.bn_momentum, config.bn_eps)?)
            } else {
                None
            };
            blocks.push(ConvBlock { conv, bn });
            in_ch = b.out_channels;
        }
        let fc = Linear::kaiming(config.fc_inputs()?, config.num_classes, &mut rng)?;
        Self::from_parts(config, blocks, fc)
    }

    /// Assembles a model from stored layers, checking them against `config`.
    pub fn from_parts(config: ConvNetConfig, blocks: Vec<ConvBlock<T>>, fc: Linear<T>) -> Result<Self> {
        config.spatial_sizes()?;
        if blocks.len() != config.blocks.len() {
            return Err(Error::shape("ConvNet::from_parts", format!("{} blocks for a {}-block config", blocks.len(), config.blocks.len())));
        }
        let mut in_ch = config.in_channels;
        for (i, (blk, spec)) in blocks.iter().zip(&config.blocks).enumerate() {
            let c = &blk.conv;
            if c.in_channels() != in_ch
                || c.out_channels() != spec.out_channels
                || c.kernel() != spec.kernel
                || c.stride != spec.stride
                || c.padding != spec.padding
            {
                return Err(Error::shape("ConvNet::from_parts", format!("conv block {} does not match config", i + 1)));
            }
            match (&blk.bn, config.batch_norm) {
                (Some(bn), true) if bn.channels() == spec.out_channels => {}
                (None, false) => {}
                _ => return Err(Error::shape("ConvNet::from_parts", format!("batch norm of block {} does not match config", i + 1))),
            }
            in_ch = spec.out_channels;
        }
        if fc.in_features() != config.fc_inputs()? || fc.out_features() != config.num_classes {
            return Err(Error::shape("ConvNet::from_parts", "classifier layer does not match config"));
        }
        let per: Vec<usize> = config.blocks.iter().map(|b| b.out_channels).collect();
        Ok(ConvNet { config, blocks, fc, channels: Arc::new(ChannelIndex::new(&per)) })
    }

    pub fn config(&self) -> &ConvNetConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[ConvBlock<T>] {
        &self.blocks
    }

    pub fn fc(&self) -> &Linear<T> {
        &self.fc
    }

    pub fn channel_index(&self) -> &Arc<ChannelIndex> {
        &self.channels
    }

    /// Total number of tapped channels.
    pub fn num_channels(&self) -> usize {
        self.channels.total()
    }

    pub fn has_batch_norm(&self) -> bool {
        self.blocks.iter().all(|b| b.bn.is_some())
    }

    pub fn cast<U: Scalar>(&self) -> ConvNet<U> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| ConvBlock {
                conv: Conv2d { weight: b.conv.weight.cast(), bias: b.conv.bias.cast(), stride: b.conv.stride, padding: b.conv.padding },
                bn: b.bn.as_ref().map(|bn| {
                    BatchNorm2d::from_parts(
                        bn.gamma.cast(),
                        bn.beta.cast(),
                        bn.running_mean.cast(),
                        bn.running_var.cast(),
                        bn.momentum(),
                        bn.eps(),
                        bn.updates(),
                    )
                    .expect("casting preserves a valid layer")
                }),
            })
            .collect();
        ConvNet {
            config: self.config.clone(),
            blocks,
            fc: Linear { weight: self.fc.weight.cast(), bias: self.fc.bias.cast() },
            channels: self.channels.clone(),
        }
    }

    /// All trainable parameters in a fixed order: per block conv weight,
    /// conv bias, BN γ, BN β; then FC weight and bias.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.conv.weight);
            out.push(&b.conv.bias);
            if let Some(bn) = &b.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out.push(&self.fc.weight);
        out.push(&self.fc.bias);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weight);
            out.push(&mut b.conv.bias);
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.fc.weight);
        out.push(&mut self.fc.bias);
        out
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        input.expect_ndim("ConvNet::forward", 4)?;
        let s = input.shape();
        let c = &self.config;
        if s[1] != c.in_channels || s[2] != c.input_size || s[3] != c.input_size {
            return Err(Error::shape(
                "ConvNet::forward",
                format!("expected [B, {}, {}, {}], got {:?}", c.in_channels, c.input_size, c.input_size, s),
            ));
        }
        if s[0] == 0 {
            return Err(Error::Empty("ConvNet::forward batch"));
        }
        Ok(s[0])
    }

    /// Eval-mode forward returning logits `[B, classes]`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.eval_pass(input, None)
    }

    /// One eval-mode forward pass returning logits and the batch's
    /// activation statistics at every tap.
    pub fn forward_with_stats(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ActivationStats)> {
        let (logits, per_example) = self.forward_with_example_stats(input)?;
        Ok((logits, ActivationStats::merge(&per_example)?))
    }

    /// Like [`ConvNet::forward_with_stats`] but keeps one statistics record
    /// per example (each with `batch_size == 1`).
    pub fn forward_with_example_stats(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<ActivationStats>)> {
        let b = self.check_input(input)?;
        let c = self.num_channels();
        let mut stats: Vec<ActivationStats> = (0..b)
            .map(|_| ActivationStats { per_channel_mean: vec![0.0; c], per_channel_sqmean: vec![0.0; c], batch_size: 1 })
            .collect();
        let logits = self.eval_pass(input, Some(&mut stats))?;
        Ok((logits, stats))
    }

    fn eval_pass(&self, input: &Tensor<T>, mut stats: Option<&mut [ActivationStats]>) -> Result<Tensor<T>> {
        let b = self.check_input(input)?;
        let mut x: Option<Tensor<T>> = None;
        for (l, blk) in self.blocks.iter().enumerate() {
            let z = blk.conv.forward(x.as_ref().unwrap_or(input))?;
            if let Some(st) = stats.as_deref_mut() {
                record_taps(&z, self.channels.layer_range(l).start, st);
            }
            let y = match &blk.bn {
                Some(bn) => bn.forward_eval(&z)?,
                None => z,
            };
            x = Some(relu(&y));
        }
        let pooled = avgpool2d(&x.expect("at least one block"), self.config.pool)?;
        let flat_len = pooled.len() / b;
        self.fc.forward(&pooled.reshape(&[b, flat_len])?)
    }

    /// Training-mode forward (batch statistics in every BN) without touching
    /// the running averages. Returns logits, the tapped statistics of the
    /// batch, and each BN layer's batch statistics.
    pub fn forward_train_with_stats(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ActivationStats, Vec<BatchStats>)> {
        let pass = self.train_pass(input)?;
        Ok((pass.logits, ActivationStats::merge(&pass.tap_stats)?, pass.bn_stats))
    }

    fn train_pass(&self, input: &Tensor<T>) -> Result<TrainPass<T>> {
        let b = self.check_input(input)?;
        let c = self.num_channels();
        let mut tap_stats: Vec<ActivationStats> = (0..b)
            .map(|_| ActivationStats { per_channel_mean: vec![0.0; c], per_channel_sqmean: vec![0.0; c], batch_size: 1 })
            .collect();
        let mut conv_caches = Vec::with_capacity(self.blocks.len());
        let mut bn_caches = Vec::with_capacity(self.blocks.len());
        let mut pre_relu = Vec::with_capacity(self.blocks.len());
        let mut bn_stats = Vec::new();
        let mut x: Option<Tensor<T>> = None;
        for (l, blk) in self.blocks.iter().enumerate() {
            let (z, cc) = blk.conv.forward_train(x.as_ref().unwrap_or(input))?;
            record_taps(&z, self.channels.layer_range(l).start, &mut tap_stats);
            conv_caches.push(cc);
            let y = match &blk.bn {
                Some(bn) => {
                    let (out, cache) = bn.normalize_with_batch_stats(&z)?;
                    bn_stats.push(BatchStats { mean: out.batch_mean, var: out.batch_var });
                    bn_caches.push(Some(cache));
                    out.output
                }
                None => {
                    bn_caches.push(None);
                    z
                }
            };
            x = Some(relu(&y));
            pre_relu.push(y);
        }
        let last = x.expect("at least one block");
        let pool_input_shape = last.shape().to_vec();
        let pooled = avgpool2d(&last, self.config.pool)?;
        let flat_len = pooled.len() / b;
        let fc_input = pooled.reshape(&[b, flat_len])?;
        let logits = self.fc.forward(&fc_input)?;
        Ok(TrainPass { logits, conv_caches, bn_caches, pre_relu, pool_input_shape, fc_input, bn_stats, tap_stats })
    }

    fn backward(&self, pass: &TrainPass<T>, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let fcg = self.fc.backward(&pass.fc_input, grad_logits)?;
        let pooled_shape = {
            let s = &pass.pool_input_shape;
            let p = self.config.pool;
            [s[0], s[1], s[2] / p, s[3] / p]
        };
        let mut grad = avgpool2d_backward(&pass.pool_input_shape, self.config.pool, &fcg.input.reshape(&pooled_shape)?)?;
        let mut per_block: Vec<Vec<Tensor<T>>> = Vec::with_capacity(self.blocks.len());
        for l in (0..self.blocks.len()).rev() {
            let blk = &self.blocks[l];
            let dy = relu_backward(&pass.pre_relu[l], &grad)?;
            let mut grads = Vec::with_capacity(4);
            let dz = match (&blk.bn, &pass.bn_caches[l]) {
                (Some(bn), Some(cache)) => {
                    let (dz, dgamma, dbeta) = bn.backward(cache, &dy)?;
                    grads.push(dgamma);
                    grads.push(dbeta);
                    dz
                }
                _ => dy,
            };
            let cg = blk.conv.backward(&pass.conv_caches[l], &dz, l > 0)?;
            grads.insert(0, cg.bias);
            grads.insert(0, cg.weight);
            per_block.push(grads);
            if let Some(gi) = cg.input {
                grad = gi;
            }
        }
        let mut out: Vec<Tensor<T>> = per_block.into_iter().rev().flatten().collect();
        out.push(fcg.weight);
        out.push(fcg.bias);
        Ok(out)
    }

    /// Mean cross-entropy of a training-mode pass and the gradient of every
    /// parameter (order of [`ConvNet::parameters`]). Running averages are
    /// left untouched.
    pub fn loss_and_gradients(&self, input: &Tensor<T>, labels: &[usize]) -> Result<(f64, Vec<Tensor<T>>)> {
        let pass = self.train_pass(input)?;
        let (loss, grad_logits) = crate::nn::cross_entropy_loss(&pass.logits, labels)?;
        let grads = self.backward(&pass, &grad_logits)?;
        Ok((loss, grads))
    }

    /// Smallest |pre-ReLU value| over a training-mode pass. Finite-difference
    /// gradient checks are only meaningful when this is well above the step.
    pub fn min_relu_margin(&self, input: &Tensor<T>) -> Result<f64> {
        let pass = self.train_pass(input)?;
        Ok(pass
            .pre_relu
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v.as_f64().abs())
            .fold(f64::INFINITY, f64::min))
    }

    /// One running-average update of every BN layer, from a training pass.
    fn update_running(&mut self, stats: &[BatchStats]) {
        let mut it = stats.iter();
        for blk in &mut self.blocks {
            if let Some(bn) = &mut blk.bn {
                let s = it.next().expect("one stats record per BN layer");
                bn.update_running(&s.mean, &s.var);
            }
        }
    }
}

/// Adds each example's per-channel spatial mean and mean square of `z`
/// (`[B, C, H, W]`) into `stats[b]` starting at global channel `offset`.
fn record_taps<T: Scalar>(z: &Tensor<T>, offset: usize, stats: &mut [ActivationStats]) {
    let s = z.shape();
    let (c, hw) = (s[1], s[2] * s[3]);
    let inv = 1.0 / hw as f64;
    for (bi, st) in stats.iter_mut().enumerate() {
        for ch in 0..c {
            let plane = &z.data()[(bi * c + ch) * hw..(bi * c + ch + 1) * hw];
            let (mut s1, mut s2) = (0.0, 0.0);
            for &v in plane {
                let v = v.as_f64();
                s1 += v;
                s2 += v * v;
            }
            st.per_channel_mean[offset + ch] = s1 * inv;
            st.per_channel_sqmean[offset + ch] = s2 * inv;
        }
    }
}

#[cfg(test)]
mod tests;
