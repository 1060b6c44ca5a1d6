//! OOD classifiers over discrepancy vectors. Labels follow ID = 0, OOD = 1
//! and every score is the probability of OOD.

mod importance;
mod lr;
mod mlp;
mod standardizer;

use alloc::vec::Vec;

pub use importance::{first_k_layers_eval, layer_importance, FirstKResult, LayerImportance};
pub use lr::{lr_objective, train_lr, LrConfig, LrDetector, LrFitReport};
pub use mlp::{train_mlp, MlpConfig, MlpDetector, MlpFitReport};
pub use standardizer::{Standardizer, MIN_STD};

use crate::{Error, Result};

/// A trained detector of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Lr(LrDetector),
    Mlp(MlpDetector),
}

impl Detector {
    pub fn input_dim(&self) -> usize {
        match self {
            Detector::Lr(d) => d.input_dim(),
            Detector::Mlp(d) => d.input_dim(),
        }
    }

    pub fn standardizer(&self) -> &Standardizer {
        match self {
            Detector::Lr(d) => &d.standardizer,
            Detector::Mlp(d) => &d.standardizer,
        }
    }

    pub fn score(&self, v: &[f64]) -> Result<f64> {
        match self {
            Detector::Lr(d) => d.score(v),
            Detector::Mlp(d) => d.score(v),
        }
    }

    pub fn score_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.score(r.as_ref())).collect()
    }
}

/// Detector family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorSpec {
    Lr(LrConfig),
    Mlp(MlpConfig),
}

impl DetectorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorSpec::Lr(_) => "lr",
            DetectorSpec::Mlp(_) => "mlp",
        }
    }

    pub fn train<R: AsRef<[f64]>>(&self, rows: &[R], labels: &[u8]) -> Result<Detector> {
        Ok(match self {
            DetectorSpec::Lr(c) => Detector::Lr(train_lr(rows, labels, c)?.0),
            DetectorSpec::Mlp(c) => Detector::Mlp(train_mlp(rows, labels, c)?.0),
        })
    }
}

pub(crate) fn check_training_set<R: AsRef<[f64]>>(rows: &[R], labels: &[u8]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Empty("detector training set"));
    }
    if rows.len() != labels.len() {
        return Err(Error::shape("detector training", alloc::format!("{} rows vs {} labels", rows.len(), labels.len())));
    }
    let d = rows[0].as_ref().len();
    if let Some(r) = rows.iter().find(|r| r.as_ref().len() != d) {
        return Err(Error::shape("detector training", alloc::format!("row of length {} among rows of length {d}", r.as_ref().len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(alloc::format!("label {bad} is not 0 or 1")));
    }
    let ones = labels.iter().filter(|&&y| y == 1).count();
    if ones == 0 {
        return Err(Error::SingleClass(0));
    }
    if ones == labels.len() {
        return Err(Error::SingleClass(1));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn batch_scores_match_single_scores() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.5], vec![2.0, -1.0], vec![3.0, 0.0]];
        let labels = [0, 0, 1, 1];
        for spec in [DetectorSpec::Lr(LrConfig::default()), DetectorSpec::Mlp(MlpConfig { hidden: 4, epochs: 3, ..MlpConfig::default() })] {
            let det = spec.train(&rows, &labels).unwrap();
            let batch = det.score_batch(&rows).unwrap();
            for (r, b) in rows.iter().zip(&batch) {
                assert_eq!(det.score(r).unwrap(), *b);
            }
            assert!(det.score(&[1.0]).is_err());
        }
    }

    #[test]
    fn training_set_checks() {
        let rows = vec![vec![0.0], vec![1.0]];
        assert!(matches!(check_training_set(&rows, &[0, 0]), Err(Error::SingleClass(0))));
        assert!(matches!(check_training_set(&rows, &[1, 1]), Err(Error::SingleClass(1))));
        assert!(check_training_set(&rows, &[0, 2]).is_err());
        assert!(check_training_set(&rows, &[0]).is_err());
        assert!(check_training_set(&[vec![0.0], vec![1.0, 2.0]], &[0, 1]).is_err());
        assert!(check_training_set::<Vec<f64>>(&[], &[]).is_err());
        assert!(check_training_set(&rows, &[0, 1]).is_ok());
    }
}
