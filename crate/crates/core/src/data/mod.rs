//! Image datasets, byte codecs, synthetic distributions, crafted OOD
//! examples and the detector access protocols.

mod codec;
mod permute;
mod protocol;
pub mod synth;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use codec::{decode_cifar, decode_raw_u8, encode_cifar, encode_raw_u8, CIFAR_PIXELS, CIFAR_RECORD};
pub use permute::{block_permute, permute_blocks, BlockPermutation};
pub use protocol::{make_protocol_split, Protocol, ProtocolSplit, SplitItem, SplitSizes, Source, FEW_SHOT_PER_CLASS};
pub use synth::{synth_pair, SynthConfig, SynthSpec, Texture};

use crate::{Error, Result, Tensor};

/// Per-channel affine normalization `(x − mean) / std` applied to [0, 1]
/// pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::invalid(format!("normalization needs matching non-empty mean/std, got {} and {}", mean.len(), std.len())));
        }
        if std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("normalization std must be positive and finite"));
        }
        Ok(Normalization { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Normalization { mean: alloc::vec![0.0; channels], std: alloc::vec![1.0; channels] }
    }

    /// Per-channel population mean and std of `[N, C, H, W]` pixels.
    pub fn fit(pixels: &Tensor) -> Result<Self> {
        pixels.expect_ndim("Normalization::fit", 4)?;
        let (n, c) = (pixels.dim(0), pixels.dim(1));
        let plane = pixels.dim(2) * pixels.dim(3);
        if n == 0 || plane == 0 {
            return Err(Error::Empty("Normalization::fit"));
        }
        let count = (n * plane) as f64;
        let mut mean = alloc::vec![0.0; c];
        let mut var = alloc::vec![0.0; c];
        for i in 0..n {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += pixels.item(i)[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for i in 0..n {
            for ch in 0..c {
                var[ch] += pixels.item(i)[ch * plane..(ch + 1) * plane].iter().map(|x| (x - mean[ch]) * (x - mean[ch])).sum::<f64>();
            }
        }
        let std = var.iter().map(|v| crate::math::sqrt(v / count).max(1e-8)).collect();
        Normalization::new(mean, std)
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        x.expect_ndim("normalization", 4)?;
        if x.dim(1) != self.channels() {
            return Err(Error::shape("normalization", format!("{} image channels vs {} constants", x.dim(1), self.channels())));
        }
        Ok(x.dim(2) * x.dim(3))
    }

    pub fn normalize(&self, pixels: &Tensor) -> Result<Tensor> {
        let plane = self.check(pixels)?;
        let c = self.channels();
        let mut out = pixels.clone();
        for (j, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (j / plane) % c;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
        Ok(out)
    }

    pub fn denormalize(&self, images: &Tensor) -> Result<Tensor> {
        let plane = self.check(images)?;
        let c = self.channels();
        let mut out = images.clone();
        for (j, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (j / plane) % c;
            *v = *v * self.std[ch] + self.mean[ch];
        }
        Ok(out)
    }
}

/// Normalized images `[N, C, H, W]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub name: String,
    pub normalization: Normalization,
}

impl ImageDataset {
    /// Builds a dataset from [0, 1] pixels, normalizing them.
    pub fn from_pixels(pixels: &Tensor, labels: Vec<usize>, name: impl Into<String>, normalization: Normalization) -> Result<Self> {
        let images = normalization.normalize(pixels)?;
        Self::from_normalized(images, labels, name, normalization)
    }

    pub fn from_normalized(images: Tensor, labels: Vec<usize>, name: impl Into<String>, normalization: Normalization) -> Result<Self> {
        images.expect_ndim("ImageDataset", 4)?;
        if images.dim(0) == 0 {
            return Err(Error::Empty("ImageDataset"));
        }
        if labels.len() != images.dim(0) {
            return Err(Error::shape("ImageDataset", format!("{} labels for {} images", labels.len(), images.dim(0))));
        }
        if images.dim(1) != normalization.channels() {
            return Err(Error::shape("ImageDataset", format!("{} channels vs {} normalization constants", images.dim(1), normalization.channels())));
        }
        if !images.is_finite() {
            return Err(Error::NonFinite("dataset images".into()));
        }
        Ok(ImageDataset { images, labels, name: name.into(), normalization })
    }

    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.images.dim(1)
    }

    pub fn height(&self) -> usize {
        self.images.dim(2)
    }

    pub fn width(&self) -> usize {
        self.images.dim(3)
    }

    /// The [0, 1] pixel values.
    pub fn pixels(&self) -> Tensor {
        self.normalization.denormalize(&self.images).expect("dataset invariants checked at construction")
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("index {bad} out of range for {} examples", self.len())));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::from_normalized(self.images.select(indices), labels, name, self.normalization.clone())
    }

    /// Same pixels renormalized with other constants (OOD sets take the ID
    /// set's constants).
    pub fn renormalized(&self, normalization: &Normalization) -> Result<Self> {
        Self::from_pixels(&self.pixels(), self.labels.clone(), self.name.clone(), normalization.clone())
    }
}
