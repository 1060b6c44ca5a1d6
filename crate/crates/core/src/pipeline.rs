//! Datasets through a model into discrepancy vectors, and the end-to-end
//! detection experiment: split, extract, train a detector, evaluate.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::data::{make_protocol_split, ImageDataset, Protocol, ProtocolSplit, Source, SplitItem, SplitSizes};
use crate::detector::{first_k_layers_eval, layer_importance, Detector, DetectorSpec, FirstKResult, LayerImportance};
use crate::metrics::{evaluate, EvalReport, ScoredSet};
use crate::model::{ActivationStats, ChannelIndex, ConvNet};
use crate::nmd::{compute_nmd, compute_nvd, concat_nmd_nvd, NmdVector, PairStandardizer, ReferenceStats, VectorKind};
use crate::{Error, Result, Scalar, Tensor};

/// Examples per forward pass when extracting statistics.
pub const EXTRACT_CHUNK: usize = 32;

/// Per-example activation statistics of `images`, in order.
pub fn example_stats<T: Scalar>(model: &ConvNet<T>, images: &Tensor<T>, chunk: usize) -> Result<Vec<ActivationStats>> {
    if chunk == 0 {
        return Err(Error::invalid("extraction chunk must be >= 1"));
    }
    let n = images.shape().first().copied().unwrap_or(0);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        out.extend(model.forward_with_example_stats(&images.select(&idx))?.1);
        start = end;
    }
    Ok(out)
}

/// Statistics of consecutive groups of `batch` examples (the detection
/// unit `I`); a trailing incomplete group is dropped.
pub fn group_stats(per_example: &[ActivationStats], batch: usize) -> Result<Vec<ActivationStats>> {
    if batch == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    if per_example.len() < batch {
        return Err(Error::Infeasible(format!("{} examples cannot form a batch of {batch}", per_example.len())));
    }
    per_example.chunks_exact(batch).map(ActivationStats::merge).collect()
}

/// Statistics → detector input vectors of one kind against a fixed
/// reference. Concatenated vectors carry the standardizers of both halves.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    pub kind: VectorKind,
    pub reference: ReferenceStats,
    pub pair: Option<PairStandardizer>,
}

impl Featurizer {
    /// For NMD or NVD vectors; concatenation needs [`Featurizer::fit`].
    pub fn new(kind: VectorKind, reference: ReferenceStats) -> Result<Self> {
        if kind == VectorKind::NmdConcatNvd {
            return Err(Error::invalid("concatenated vectors need standardizers fitted on the training split"));
        }
        Ok(Featurizer { kind, reference, pair: None })
    }

    /// Fits the half standardizers on `train` when `kind` is concatenation.
    pub fn fit(kind: VectorKind, reference: ReferenceStats, train: &[ActivationStats]) -> Result<Self> {
        if kind != VectorKind::NmdConcatNvd {
            return Self::new(kind, reference);
        }
        let nmd = train.iter().map(|s| compute_nmd(s, &reference)).collect::<Result<Vec<_>>>()?;
        let nvd = train.iter().map(|s| compute_nvd(s, &reference)).collect::<Result<Vec<_>>>()?;
        let pair = PairStandardizer::fit(&nmd, &nvd)?;
        Ok(Featurizer { kind, reference, pair: Some(pair) })
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            VectorKind::NmdConcatNvd => 2 * self.reference.len(),
            _ => self.reference.len(),
        }
    }

    pub fn channel_index(&self) -> Arc<ChannelIndex> {
        match self.kind {
            VectorKind::NmdConcatNvd => Arc::new(self.reference.channels.doubled()),
            _ => self.reference.channels.clone(),
        }
    }

    pub fn vector(&self, stats: &ActivationStats) -> Result<NmdVector> {
        match self.kind {
            VectorKind::Nmd => compute_nmd(stats, &self.reference),
            VectorKind::Nvd => compute_nvd(stats, &self.reference),
            VectorKind::NmdConcatNvd => {
                let pair = self.pair.as_ref().ok_or_else(|| Error::invalid("concatenation standardizers missing"))?;
                concat_nmd_nvd(&compute_nmd(stats, &self.reference)?, &compute_nvd(stats, &self.reference)?, pair)
            }
        }
    }

    pub fn vectors(&self, stats: &[ActivationStats]) -> Result<Vec<NmdVector>> {
        stats.iter().map(|s| self.vector(s)).collect()
    }
}

/// The datasets an experiment draws from. `ood_b` is the evaluation OOD set
/// of the transfer protocol.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentData<'a> {
    pub id: &'a ImageDataset,
    pub ood: &'a ImageDataset,
    pub ood_b: Option<&'a ImageDataset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub seed: u64,
    pub sizes: SplitSizes,
    /// Examples per detection unit `|I|`.
    pub batch_size: usize,
    pub kind: VectorKind,
    pub detector: DetectorSpec,
    pub first_k: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub eval: EvalReport,
    pub scores: ScoredSet,
    pub train_units: usize,
    pub detector: Detector,
    pub featurizer: Featurizer,
    /// Only for logistic regression.
    pub importance: Option<LayerImportance>,
    pub first_k: Vec<FirstKResult>,
}

/// Detection units with labels, as statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStats {
    pub stats: Vec<ActivationStats>,
    pub labels: Vec<u8>,
}

fn item_image<'a>(item: &SplitItem, split: &'a ProtocolSplit, data: &ExperimentData<'a>) -> Result<&'a [f64]> {
    let ds = match item.source {
        Source::Id => data.id,
        Source::Ood => data.ood,
        Source::OodTransfer => data.ood_b.ok_or_else(|| Error::invalid("split references a missing transfer set"))?,
        Source::Crafted => split.crafted.as_ref().ok_or_else(|| Error::invalid("split references missing crafted examples"))?,
    };
    if item.index >= ds.len() {
        return Err(Error::invalid(format!("split index {} out of range for {}", item.index, ds.name)));
    }
    Ok(ds.images.item(item.index))
}

/// Runs the items of one side of a split through the model and groups each
/// class into units of `batch` examples.
pub fn split_stats(model: &ConvNet, split: &ProtocolSplit, items: &[SplitItem], data: &ExperimentData<'_>, batch: usize) -> Result<LabeledStats> {
    let shape = data.id.images.shape();
    let mut out = LabeledStats { stats: Vec::new(), labels: Vec::new() };
    for label in [0u8, 1] {
        let chosen: Vec<&SplitItem> = items.iter().filter(|i| i.label == label).collect();
        let mut per_example = Vec::with_capacity(chosen.len());
        for chunk in chosen.chunks(EXTRACT_CHUNK) {
            let mut buf = Vec::with_capacity(chunk.len() * shape[1..].iter().product::<usize>());
            for it in chunk {
                buf.extend_from_slice(item_image(it, split, data)?);
            }
            let x = Tensor::from_vec(&[chunk.len(), shape[1], shape[2], shape[3]], buf)?;
            per_example.extend(model.forward_with_example_stats(&x)?.1);
        }
        let units = group_stats(&per_example, batch)?;
        out.labels.extend(core::iter::repeat(label).take(units.len()));
        out.stats.extend(units);
    }
    Ok(out)
}

/// Fits the featurizer and detector on `train` and evaluates on `eval`.
pub fn train_and_evaluate(
    reference: &ReferenceStats,
    kind: VectorKind,
    spec: &DetectorSpec,
    train: &LabeledStats,
    eval: &LabeledStats,
    first_k_layers: Option<usize>,
) -> Result<ExperimentReport> {
    let featurizer = Featurizer::fit(kind, reference.clone(), &train.stats)?;
    let train_vecs = featurizer.vectors(&train.stats)?;
    let eval_vecs = featurizer.vectors(&eval.stats)?;
    let detector = spec.train(&train_vecs, &train.labels)?;
    let scores = ScoredSet::new(detector.score_batch(&eval_vecs)?, eval.labels.clone())?;
    let report = evaluate(&scores)?;
    let index = featurizer.channel_index();
    let importance = match &detector {
        Detector::Lr(lr) => Some(layer_importance(lr, &index)?),
        Detector::Mlp(_) => None,
    };
    let first_k = match first_k_layers {
        Some(layers) => first_k_layers_eval(spec, &index, layers, (&train_vecs, &train.labels), (&eval_vecs, &eval.labels))?,
        None => Vec::new(),
    };
    Ok(ExperimentReport { eval: report, scores, train_units: train.labels.len(), detector, featurizer, importance, first_k })
}

/// Split → extract → train detector → evaluate.
pub fn run_experiment(model: &ConvNet, reference: &ReferenceStats, data: ExperimentData<'_>, config: &ExperimentConfig) -> Result<ExperimentReport> {
    if reference.len() != model.num_channels() {
        return Err(Error::shape("run_experiment", format!("{} reference channels vs {} model channels", reference.len(), model.num_channels())));
    }
    let split = make_protocol_split(data.id, data.ood, data.ood_b, config.protocol, config.seed, config.sizes)?;
    let train = split_stats(model, &split, &split.train, &data, config.batch_size)?;
    let eval = split_stats(model, &split, &split.eval, &data, config.batch_size)?;
    let layers = config.first_k.then(|| model.blocks().len());
    train_and_evaluate(reference, config.kind, &config.detector, &train, &eval, layers)
}
