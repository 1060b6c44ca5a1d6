use alloc::vec::Vec;

use super::{DetectorSpec, LrDetector};
use crate::metrics::{auroc, ScoredSet};
use crate::model::ChannelIndex;
use crate::{Error, Result};

/// Mean `|w|` per layer and the same list rescaled to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerImportance {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn layer_importance(lr: &LrDetector, index: &ChannelIndex) -> Result<LayerImportance> {
    if lr.weights.len() != index.total() {
        return Err(Error::shape(
            "layer_importance",
            alloc::format!("{} weights vs {} indexed channels", lr.weights.len(), index.total()),
        ));
    }
    let raw: Vec<f64> = (0..index.layers())
        .map(|l| {
            let r = index.layer_range(l);
            let n = r.len();
            if n == 0 {
                0.0
            } else {
                lr.weights[r].iter().map(|w| w.abs()).sum::<f64>() / n as f64
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let normalized = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        alloc::vec![1.0 / raw.len().max(1) as f64; raw.len()]
    };
    Ok(LayerImportance { raw, normalized })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstKResult {
    pub k: usize,
    pub dims: usize,
    pub auroc: f64,
}

/// Retrains `spec` on the channels of the first `k` layers for each `k` in
/// `1..=L` and reports held-out AUROC. `layers` is the model depth L; with a
/// concatenated index (2L entries) layer `l` selects both of its copies.
pub fn first_k_layers_eval<R: AsRef<[f64]>>(
    spec: &DetectorSpec,
    index: &ChannelIndex,
    layers: usize,
    train: (&[R], &[u8]),
    eval: (&[R], &[u8]),
) -> Result<Vec<FirstKResult>> {
    if layers == 0 || index.layers() % layers != 0 {
        return Err(Error::invalid(alloc::format!("{} indexed layers do not fold into {layers}", index.layers())));
    }
    let mut out = Vec::with_capacity(layers);
    for k in 1..=layers {
        let mask = index.first_layers_mask(k, layers);
        let pick = |rows: &[R]| -> Result<Vec<Vec<f64>>> {
            rows.iter()
                .map(|r| {
                    let r = r.as_ref();
                    if r.len() != mask.len() {
                        return Err(Error::shape("first_k_layers_eval", alloc::format!("row of length {} vs index {}", r.len(), mask.len())));
                    }
                    Ok(r.iter().zip(&mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect())
                })
                .collect()
        };
        let tr = pick(train.0)?;
        let ev = pick(eval.0)?;
        let det = spec.train(&tr, train.1)?;
        let set = ScoredSet::new(det.score_batch(&ev)?, eval.1.to_vec())?;
        out.push(FirstKResult { k, dims: tr.first().map_or(0, Vec::len), auroc: auroc(&set)? });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{train_lr, LrConfig, Standardizer};
    use alloc::vec;
    use alloc::vec::Vec;

    fn lr_with(weights: Vec<f64>) -> LrDetector {
        let d = weights.len();
        LrDetector { weights, bias: 0.0, standardizer: Standardizer::identity(d) }
    }

    #[test]
    fn equal_magnitudes_give_uniform_importance() {
        let idx = ChannelIndex::new(&[2, 3, 1]);
        let imp = layer_importance(&lr_with(vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0]), &idx).unwrap();
        assert_eq!(imp.raw, vec![1.0, 1.0, 1.0]);
        for v in &imp.normalized {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concentrated_weights() {
        let idx = ChannelIndex::new(&[2, 2]);
        let imp = layer_importance(&lr_with(vec![0.5, -1.5, 0.0, 0.0]), &idx).unwrap();
        assert_eq!(imp.raw, vec![1.0, 0.0]);
        assert_eq!(imp.normalized, vec![1.0, 0.0]);
        assert!(layer_importance(&lr_with(vec![1.0]), &idx).is_err());
    }

    #[test]
    fn normalized_sums_to_one() {
        let idx = ChannelIndex::new(&[3, 4, 5]);
        let w: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let imp = layer_importance(&lr_with(w), &idx).unwrap();
        assert!((imp.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn first_k_covers_every_depth_and_full_depth_matches_full_vector() {
        let idx = ChannelIndex::new(&[2, 2, 2]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let y = (i % 2) as u8;
            let t = i as f64 * 0.37;
            rows.push(vec![y as f64 + 0.8 * t.sin(), t.cos(), 0.5 * y as f64 + (2.0 * t).sin(), (3.0 * t).cos(), t.sin() * t.cos(), y as f64 * 0.2 + (5.0 * t).sin()]);
            labels.push(y);
        }
        let (tr, ev) = rows.split_at(20);
        let (ltr, lev) = labels.split_at(20);
        let spec = DetectorSpec::Lr(LrConfig::default());
        let res = first_k_layers_eval(&spec, &idx, 3, (tr, ltr), (ev, lev)).unwrap();
        assert_eq!(res.len(), 3);
        assert_eq!(res.iter().map(|r| r.dims).collect::<Vec<_>>(), vec![2, 4, 6]);
        let full = train_lr(tr, ltr, &LrConfig::default()).unwrap().0;
        let scores: Vec<f64> = ev.iter().map(|r| full.score(r).unwrap()).collect();
        let a = auroc(&ScoredSet::new(scores, lev.to_vec()).unwrap()).unwrap();
        assert_eq!(res[2].auroc, a);
    }
}
