//! Neural mean discrepancy and its second-order sibling.
//!
//! For a batch `I` and tapped channel `(l, c)` the NMD entry is
//! `μ[f_c^l(I)] − μ[f_c^l(D_tr)]`: the batch's mean activation minus the
//! training set's. The training mean comes either from the batch-norm
//! running average μ̄ (no extra pass over the data) or from one exact pass
//! over the training set. The variance discrepancy (NVD) replaces means by
//! standard deviations.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::detector::Standardizer;
use crate::model::{ActivationStats, ChannelIndex, ConvNet};
use crate::{math, Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceSource {
    BnFreeLunch,
    DatasetTraversal,
}

/// Per-channel training-set mean and (biased) variance at every tap.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub source: ReferenceSource,
    /// Batch-norm updates behind the running averages, or examples traversed.
    pub sample_count: u64,
    pub channels: Arc<ChannelIndex>,
}

impl ReferenceStats {
    pub fn new(mean: Vec<f64>, var: Vec<f64>, source: ReferenceSource, sample_count: u64, channels: Arc<ChannelIndex>) -> Result<Self> {
        if mean.len() != channels.total() || var.len() != channels.total() {
            return Err(Error::shape(
                "ReferenceStats",
                format!("mean {} / var {} vs {} channels", mean.len(), var.len(), channels.total()),
            ));
        }
        if mean.iter().chain(&var).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reference statistics".into()));
        }
        if var.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("reference variance must be non-negative"));
        }
        Ok(ReferenceStats { mean, var, source, sample_count, channels })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// The training reference read straight out of the batch-norm buffers.
pub fn reference_from_bn<T: Scalar>(model: &ConvNet<T>) -> Result<ReferenceStats> {
    let mut mean = Vec::with_capacity(model.num_channels());
    let mut var = Vec::with_capacity(model.num_channels());
    let mut updates = u64::MAX;
    for blk in model.blocks() {
        let bn = blk.bn.as_ref().ok_or(Error::MissingBatchNorm)?;
        mean.extend(bn.running_mean.to_f64_vec());
        var.extend(bn.running_var.to_f64_vec());
        updates = updates.min(bn.updates());
    }
    if model.blocks().is_empty() {
        updates = 0;
    }
    ReferenceStats::new(mean, var, ReferenceSource::BnFreeLunch, updates, model.channel_index().clone())
}

/// Exact per-channel mean and variance over every example and spatial
/// position of `images` (`[N, C, H, W]`), streamed in batches of
/// `batch_size`. The result does not depend on the batch size beyond
/// rounding.
pub fn reference_from_dataset<T: Scalar>(model: &ConvNet<T>, images: &Tensor<T>, batch_size: usize) -> Result<ReferenceStats> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let n = images.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::Empty("reference dataset"));
    }
    let c = model.num_channels();
    let mut sum = vec![0.0; c];
    let mut sqsum = vec![0.0; c];
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (_, per_example) = model.forward_with_example_stats(&images.select(&idx))?;
        for st in &per_example {
            for g in 0..c {
                sum[g] += st.per_channel_mean[g];
                sqsum[g] += st.per_channel_sqmean[g];
            }
        }
        start = end;
    }
    let inv = 1.0 / n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s * inv).collect();
    let var = sqsum.iter().zip(&mean).map(|(q, m)| (q * inv - m * m).max(0.0)).collect();
    ReferenceStats::new(mean, var, ReferenceSource::DatasetTraversal, n as u64, model.channel_index().clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    Nmd,
    Nvd,
    NmdConcatNvd,
}

impl VectorKind {
    pub fn name(self) -> &'static str {
        match self {
            VectorKind::Nmd => "nmd",
            VectorKind::Nvd => "nvd",
            VectorKind::NmdConcatNvd => "concat",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "nmd" => Some(VectorKind::Nmd),
            "nvd" => Some(VectorKind::Nvd),
            "concat" | "nmd+nvd" => Some(VectorKind::NmdConcatNvd),
            _ => None,
        }
    }
}

/// A discrepancy vector with the channel layout of its entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NmdVector {
    pub values: Vec<f64>,
    pub channels: Arc<ChannelIndex>,
    pub kind: VectorKind,
}

impl NmdVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl AsRef<[f64]> for NmdVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

fn check_dims(op: &'static str, stats: &ActivationStats, reference: &ReferenceStats) -> Result<()> {
    if stats.channels() != reference.len() || stats.per_channel_sqmean.len() != reference.len() {
        return Err(Error::shape(op, format!("{} statistics channels vs {} reference channels", stats.channels(), reference.len())));
    }
    Ok(())
}

fn finite(values: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(values)
    } else {
        Err(Error::NonFinite(format!("{what} vector")))
    }
}

/// `stats.mean − reference.mean`, channel by channel.
pub fn compute_nmd(stats: &ActivationStats, reference: &ReferenceStats) -> Result<NmdVector> {
    check_dims("compute_nmd", stats, reference)?;
    let values = stats.per_channel_mean.iter().zip(&reference.mean).map(|(m, r)| m - r).collect();
    Ok(NmdVector { values: finite(values, "NMD")?, channels: reference.channels.clone(), kind: VectorKind::Nmd })
}

/// `std(stats) − sqrt(reference.var)`, with the batch variance clamped at 0.
pub fn compute_nvd(stats: &ActivationStats, reference: &ReferenceStats) -> Result<NmdVector> {
    check_dims("compute_nvd", stats, reference)?;
    let values = (0..reference.len())
        .map(|g| {
            let m = stats.per_channel_mean[g];
            let var = (stats.per_channel_sqmean[g] - m * m).max(0.0);
            math::sqrt(var) - math::sqrt(reference.var[g])
        })
        .collect();
    Ok(NmdVector { values: finite(values, "NVD")?, channels: reference.channels.clone(), kind: VectorKind::Nvd })
}

/// Separate standardizers for the NMD and NVD halves of a concatenated
/// vector, fitted on the detector's training split.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStandardizer {
    pub nmd: Standardizer,
    pub nvd: Standardizer,
}

impl PairStandardizer {
    pub fn fit(nmd: &[NmdVector], nvd: &[NmdVector]) -> Result<Self> {
        if nmd.iter().any(|v| v.kind != VectorKind::Nmd) || nvd.iter().any(|v| v.kind != VectorKind::Nvd) {
            return Err(Error::invalid("pair standardizer needs NMD and NVD vectors respectively"));
        }
        Ok(PairStandardizer { nmd: Standardizer::fit(nmd)?, nvd: Standardizer::fit(nvd)? })
    }

    pub fn identity(channels: usize) -> Self {
        PairStandardizer { nmd: Standardizer::identity(channels), nvd: Standardizer::identity(channels) }
    }
}

/// Standardizes each half and lays them out as all NMD entries, then all
/// NVD entries, indexed by the doubled channel map.
pub fn concat_nmd_nvd(nmd: &NmdVector, nvd: &NmdVector, standardizer: &PairStandardizer) -> Result<NmdVector> {
    if nmd.kind != VectorKind::Nmd || nvd.kind != VectorKind::Nvd {
        return Err(Error::invalid(format!("cannot concatenate {} with {}", nmd.kind.name(), nvd.kind.name())));
    }
    if nmd.channels != nvd.channels {
        return Err(Error::shape("concat_nmd_nvd", alloc::string::String::from("NMD and NVD vectors index different channels")));
    }
    let mut values = standardizer.nmd.apply(&nmd.values)?;
    values.extend(standardizer.nvd.apply(&nvd.values)?);
    Ok(NmdVector { values, channels: Arc::new(nmd.channels.doubled()), kind: VectorKind::NmdConcatNvd })
}

/// The detector-free score: mean absolute entry, larger meaning more OOD.
pub fn avg_magnitude_score(v: &NmdVector) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("avg_magnitude_score"));
    }
    Ok(v.values.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_convnet4, ConvNetConfig};
    use crate::nn::normal_tensor;
    use crate::rng::substream;

    fn scalar_setup(mean: f64, sqmean: f64, ref_mean: f64, ref_var: f64) -> (ActivationStats, ReferenceStats) {
        let idx = Arc::new(ChannelIndex::new(&[1]));
        let stats = ActivationStats { per_channel_mean: vec![mean], per_channel_sqmean: vec![sqmean], batch_size: 1 };
        let r = ReferenceStats::new(vec![ref_mean], vec![ref_var], ReferenceSource::DatasetTraversal, 1, idx).unwrap();
        (stats, r)
    }

    fn tiny_model(seed: u64) -> ConvNet {
        let mut cfg = ConvNetConfig::convnet4_with_width(3, 4);
        cfg.input_size = 32;
        ConvNet::build(cfg, seed).unwrap()
    }

    fn images(n: usize, seed: u64) -> Tensor {
        normal_tensor(&[n, 3, 32, 32], 1.0, &mut substream(seed, "images"))
    }

    #[test]
    fn scalar_arithmetic() {
        let (s, r) = scalar_setup(0.7, 0.49, 0.2, 0.0);
        assert!((compute_nmd(&s, &r).unwrap().values[0] - 0.5).abs() < 1e-15);
        // std 2 around mean 0.7, reference std 0.5.
        let (s, r) = scalar_setup(0.7, 4.0 + 0.49, 0.0, 0.25);
        assert!((compute_nvd(&s, &r).unwrap().values[0] - 1.5).abs() < 1e-12);
        let (s, r) = scalar_setup(3.0, 9.0, 0.0, 0.0);
        assert_eq!(compute_nvd(&s, &r).unwrap().values[0], 0.0);
    }

    #[test]
    fn stats_equal_to_reference_give_zero() {
        let (s, r) = scalar_setup(1.25, 2.0, 1.25, 0.3);
        assert_eq!(compute_nmd(&s, &r).unwrap().values, vec![0.0]);
    }

    #[test]
    fn nvd_matches_two_pass_std() {
        let mut rng = substream(3, "nvd");
        let samples: Vec<Vec<f64>> = (0..5).map(|_| normal_tensor::<f64>(&[37], 1.5, &mut rng).into_data()).collect();
        let ref_samples = normal_tensor::<f64>(&[50], 0.7, &mut rng).into_data();
        let two_pass_std = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            math::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64)
        };
        let rs = two_pass_std(&ref_samples);
        let idx = Arc::new(ChannelIndex::new(&[5]));
        let stats = ActivationStats {
            per_channel_mean: samples.iter().map(|s| s.iter().sum::<f64>() / 37.0).collect(),
            per_channel_sqmean: samples.iter().map(|s| s.iter().map(|x| x * x).sum::<f64>() / 37.0).collect(),
            batch_size: 1,
        };
        let r = ReferenceStats::new(vec![0.0; 5], vec![rs * rs; 5], ReferenceSource::DatasetTraversal, 50, idx).unwrap();
        let nvd = compute_nvd(&stats, &r).unwrap();
        for (g, s) in samples.iter().enumerate() {
            assert!((nvd.values[g] - (two_pass_std(s) - rs)).abs() < 1e-9);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let (s, _) = scalar_setup(0.0, 0.0, 0.0, 0.0);
        let r = ReferenceStats::new(vec![0.0; 2], vec![1.0; 2], ReferenceSource::BnFreeLunch, 0, Arc::new(ChannelIndex::new(&[2]))).unwrap();
        assert!(compute_nmd(&s, &r).is_err());
        assert!(compute_nvd(&s, &r).is_err());
        assert!(ReferenceStats::new(vec![0.0], vec![-1.0], ReferenceSource::BnFreeLunch, 0, Arc::new(ChannelIndex::new(&[1]))).is_err());
    }

    #[test]
    fn fresh_bn_reference_is_zero_mean_unit_var() {
        let model = build_convnet4(10, 0).unwrap();
        let r = reference_from_bn(&model).unwrap();
        assert_eq!(r.len(), 1200);
        assert!(r.mean.iter().all(|&m| m == 0.0));
        assert!(r.var.iter().all(|&v| v == 1.0));
        assert_eq!(r.source, ReferenceSource::BnFreeLunch);
    }

    #[test]
    fn bn_reference_copies_buffers() {
        let mut model = tiny_model(1);
        let x = images(6, 1);
        let y = [0usize, 1, 2, 0, 1, 2];
        crate::model::train_classifier(&mut model, &x, &y, &crate::model::TrainConfig { epochs: 1, batch_size: 3, ..Default::default() }).unwrap();
        let r = reference_from_bn(&model).unwrap();
        let mut expected_mean = Vec::new();
        let mut expected_var = Vec::new();
        for blk in model.blocks() {
            let bn = blk.bn.as_ref().unwrap();
            expected_mean.extend_from_slice(bn.running_mean.data());
            expected_var.extend_from_slice(bn.running_var.data());
        }
        assert_eq!(r.mean, expected_mean);
        assert_eq!(r.var, expected_var);
        assert_eq!(r.sample_count, 2);
    }

    #[test]
    fn model_without_bn_needs_traversal() {
        let mut cfg = ConvNetConfig::convnet4_with_width(3, 2);
        cfg.batch_norm = false;
        let model = ConvNet::build(cfg, 0).unwrap();
        assert!(matches!(reference_from_bn(&model), Err(Error::MissingBatchNorm)));
        assert!(reference_from_dataset(&model, &images(2, 0), 1).is_ok());
    }

    #[test]
    fn traversal_matches_monolithic_batch_and_is_partition_invariant() {
        let model = tiny_model(2);
        let x = images(9, 2);
        let (_, whole) = model.forward_with_stats(&x).unwrap();
        let r1 = reference_from_dataset(&model, &x, 1).unwrap();
        let r7 = reference_from_dataset(&model, &x, 7).unwrap();
        for g in 0..model.num_channels() {
            let var = whole.per_channel_sqmean[g] - whole.per_channel_mean[g] * whole.per_channel_mean[g];
            assert!((r1.mean[g] - whole.per_channel_mean[g]).abs() < 1e-9);
            assert!((r1.var[g] - var).abs() < 1e-9);
            assert!((r1.mean[g] - r7.mean[g]).abs() < 1e-9);
            assert!((r1.var[g] - r7.var[g]).abs() < 1e-9);
        }
        assert_eq!(r1.sample_count, 9);
    }

    #[test]
    fn single_zero_image_reference() {
        let model = tiny_model(3);
        let x = Tensor::zeros(&[1, 3, 32, 32]);
        let (_, st) = model.forward_with_stats(&x).unwrap();
        let r = reference_from_dataset(&model, &x, 4).unwrap();
        let l1 = model.channel_index().layer_range(0);
        assert_eq!(r.mean[l1.clone()], st.per_channel_mean[l1]);
    }

    #[test]
    fn nmd_is_linear_in_batch_concatenation() {
        let model = tiny_model(4);
        let r = reference_from_dataset(&model, &images(4, 40), 4).unwrap();
        let a = images(3, 41);
        let b = images(5, 42);
        let both = Tensor::concat(&[&a, &b]).unwrap();
        let nmd = |x: &Tensor| compute_nmd(&model.forward_with_stats(x).unwrap().1, &r).unwrap();
        let (na, nb, nab) = (nmd(&a), nmd(&b), nmd(&both));
        for g in 0..r.len() {
            let avg = (3.0 * na.values[g] + 5.0 * nb.values[g]) / 8.0;
            assert!((nab.values[g] - avg).abs() < 1e-9);
        }
    }

    #[test]
    fn concatenation_layout() {
        let idx = Arc::new(ChannelIndex::new(&[2, 1]));
        let nmd = NmdVector { values: vec![1.0, 2.0, 3.0], channels: idx.clone(), kind: VectorKind::Nmd };
        let nvd = NmdVector { values: vec![4.0, 5.0, 6.0], channels: idx.clone(), kind: VectorKind::Nvd };
        let cat = concat_nmd_nvd(&nmd, &nvd, &PairStandardizer::identity(3)).unwrap();
        assert_eq!(cat.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(cat.kind, VectorKind::NmdConcatNvd);
        assert_eq!(cat.channels.total(), 6);
        assert_eq!(cat.channels.locate(4), Some((2, 1)));
        assert!(concat_nmd_nvd(&nvd, &nmd, &PairStandardizer::identity(3)).is_err());

        let zero = |kind| NmdVector { values: vec![0.0; 1200], channels: Arc::new(ChannelIndex::new(&[300; 4])), kind };
        let cat = concat_nmd_nvd(&zero(VectorKind::Nmd), &zero(VectorKind::Nvd), &PairStandardizer::identity(1200)).unwrap();
        assert_eq!(cat.len(), 2400);
        assert!(cat.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pair_standardizer_scales_each_half() {
        let idx = Arc::new(ChannelIndex::new(&[1]));
        let v = |x: f64, kind| NmdVector { values: vec![x], channels: idx.clone(), kind };
        let nmds = [v(0.0, VectorKind::Nmd), v(2.0, VectorKind::Nmd)];
        let nvds = [v(10.0, VectorKind::Nvd), v(30.0, VectorKind::Nvd)];
        let ps = PairStandardizer::fit(&nmds, &nvds).unwrap();
        let cat = concat_nmd_nvd(&nmds[0], &nvds[1], &ps).unwrap();
        assert_eq!(cat.values, vec![-1.0, 1.0]);
        assert!(PairStandardizer::fit(&nvds, &nmds).is_err());
    }

    #[test]
    fn average_magnitude() {
        let idx = Arc::new(ChannelIndex::new(&[2]));
        let v = |values| NmdVector { values, channels: idx.clone(), kind: VectorKind::Nmd };
        assert_eq!(avg_magnitude_score(&v(vec![0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(avg_magnitude_score(&v(vec![-1.0, 3.0])).unwrap(), 2.0);
        assert!(avg_magnitude_score(&v(vec![])).is_err());
    }
}
