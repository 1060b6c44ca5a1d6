//! Parametric image distributions standing in for a natural-image
//! benchmark: class-conditional oriented textures over a color mean.
//!
//! Class `k` of a spec with orientations `O` and frequencies `F` uses
//! orientation `O[k / |F|]` and frequency `F[k % |F|]`. Each image draws a
//! random phase, a small orientation/frequency jitter, a jittered center
//! for the Gabor envelope, and i.i.d. pixel noise.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{ImageDataset, Normalization};
use crate::rng::substream;
use crate::{math, Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    /// Sinusoidal grating under a Gaussian envelope.
    Gabor,
    /// Hard-edged checkerboard aligned with the orientation, no envelope.
    Checker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub name: String,
    /// Per-channel background level in [0, 1].
    pub color_mean: [f64; 3],
    pub amplitude: f64,
    pub texture: Texture,
    /// Radians.
    pub orientations: Vec<f64>,
    /// Cycles per pixel.
    pub frequencies: Vec<f64>,
    pub noise: f64,
    pub envelope_sigma: f64,
    pub size: usize,
}

fn orientations(n: usize) -> Vec<f64> {
    (0..n).map(|i| PI * i as f64 / n as f64).collect()
}

impl SynthSpec {
    /// Ten classes: five orientations × two frequencies of Gabor texture.
    /// The envelope is wide enough that gratings fill the image.
    pub fn in_distribution() -> Self {
        SynthSpec {
            name: "synth-id".into(),
            color_mean: [0.25, 0.22, 0.20],
            amplitude: 0.15,
            texture: Texture::Gabor,
            orientations: orientations(5),
            frequencies: alloc::vec![0.08, 0.2],
            noise: 0.03,
            envelope_sigma: 40.0,
            size: 32,
        }
    }

    /// Color mean shifted by +0.5 on every channel and checkerboard texture.
    pub fn far_ood() -> Self {
        let id = Self::in_distribution();
        SynthSpec {
            name: "synth-far-ood".into(),
            color_mean: id.color_mean.map(|c| c + 0.5),
            texture: Texture::Checker,
            ..id
        }
    }

    /// Same textures and colors at frequencies between and beyond the ID
    /// ones.
    pub fn near_ood() -> Self {
        SynthSpec { name: "synth-near-ood".into(), frequencies: alloc::vec![0.13, 0.3], ..Self::in_distribution() }
    }

    /// ID colors with checkerboard texture: a shift in texture only.
    pub fn texture_shift() -> Self {
        SynthSpec { name: "synth-texture-ood".into(), texture: Texture::Checker, ..Self::in_distribution() }
    }

    /// Any preset by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "id" => Some(Self::in_distribution()),
            "far-ood" => Some(Self::far_ood()),
            "near-ood" => Some(Self::near_ood()),
            "texture-ood" => Some(Self::texture_shift()),
            _ => None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.orientations.len() * self.frequencies.len()
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes() == 0 || self.size == 0 {
            return Err(Error::invalid(format!("synthetic spec {} has no classes or zero size", self.name)));
        }
        if !(self.amplitude >= 0.0 && self.noise >= 0.0 && self.envelope_sigma > 0.0) {
            return Err(Error::invalid(format!("synthetic spec {} has negative amplitude/noise or non-positive envelope", self.name)));
        }
        Ok(())
    }

    /// `n` images as [0, 1] pixels `[n, 3, size, size]` with class labels.
    pub fn sample_pixels(&self, n: usize, seed: u64) -> Result<(Tensor, Vec<usize>)> {
        self.validate()?;
        if n == 0 {
            return Err(Error::Empty("synthetic sample count"));
        }
        let s = self.size;
        let mut rng = substream(seed, &format!("synth/{}", self.name));
        let mut data = Vec::with_capacity(n * 3 * s * s);
        let mut labels = Vec::with_capacity(n);
        let mut pattern = alloc::vec![0.0; s * s];
        for i in 0..n {
            let k = i % self.num_classes();
            labels.push(k);
            let theta = self.orientations[k / self.frequencies.len()] + 0.05 * rng.random::<f64>();
            let freq = self.frequencies[k % self.frequencies.len()] * (0.95 + 0.1 * rng.random::<f64>());
            let (phase_u, phase_v) = (2.0 * PI * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>());
            let half = (s as f64 - 1.0) / 2.0;
            let (cy, cx) = (half + 6.0 * (rng.random::<f64>() - 0.5), half + 6.0 * (rng.random::<f64>() - 0.5));
            let (ct, st) = (math::cos(theta), math::sin(theta));
            for y in 0..s {
                for x in 0..s {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let u = dx * ct + dy * st;
                    let v = -dx * st + dy * ct;
                    pattern[y * s + x] = match self.texture {
                        Texture::Gabor => {
                            let env = math::exp(-(dx * dx + dy * dy) / (2.0 * self.envelope_sigma * self.envelope_sigma));
                            env * math::cos(2.0 * PI * freq * u + phase_u)
                        }
                        Texture::Checker => {
                            let a = math::cos(2.0 * PI * freq * u + phase_u);
                            let b = math::cos(2.0 * PI * freq * v + phase_v);
                            if (a >= 0.0) == (b >= 0.0) { 1.0 } else { -1.0 }
                        }
                    };
                }
            }
            for c in 0..3 {
                for p in &pattern {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push((self.color_mean[c] + self.amplitude * p + self.noise * z).clamp(0.0, 1.0));
                }
            }
        }
        Ok((Tensor::from_vec(&[n, 3, s, s], data)?, labels))
    }

    pub fn sample(&self, n: usize, seed: u64, normalization: &Normalization) -> Result<ImageDataset> {
        let (px, labels) = self.sample_pixels(n, seed)?;
        ImageDataset::from_pixels(&px, labels, self.name.clone(), normalization.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n: usize,
    pub id_spec: SynthSpec,
    pub ood_spec: SynthSpec,
}

/// `n` ID and `n` OOD images; both are normalized with constants fitted on
/// the ID pixels.
pub fn synth_pair(config: &SynthConfig) -> Result<(ImageDataset, ImageDataset)> {
    if config.n == 0 {
        return Err(Error::Empty("synthetic sample count"));
    }
    let (id_px, id_labels) = config.id_spec.sample_pixels(config.n, config.seed)?;
    let norm = Normalization::fit(&id_px)?;
    let id = ImageDataset::from_pixels(&id_px, id_labels, config.id_spec.name.clone(), norm.clone())?;
    let ood = config.ood_spec.sample(config.n, config.seed, &norm)?;
    Ok((id, ood))
}
