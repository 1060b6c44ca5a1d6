//! Detector access protocols.
//!
//! | protocol   | detector training OOD          | evaluation OOD |
//! |------------|--------------------------------|----------------|
//! | full       | the OOD set                    | the OOD set    |
//! | few-shot   | 25 examples of the OOD set     | the OOD set    |
//! | zero-shot  | block-permuted ID training set | the OOD set    |
//! | transfer   | OOD set A                      | OOD set B      |
//!
//! ID examples in training and evaluation come from disjoint parts of the
//! same ID set.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{block_permute, BlockPermutation, ImageDataset};
use crate::rng::substream;
use crate::{Error, Result};

pub const FEW_SHOT_PER_CLASS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Full,
    FewShot,
    ZeroShot,
    Transfer,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Full => "full",
            Protocol::FewShot => "few-shot",
            Protocol::ZeroShot => "zero-shot",
            Protocol::Transfer => "transfer",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Protocol::Full),
            "few-shot" | "few_shot" => Some(Protocol::FewShot),
            "zero-shot" | "zero_shot" => Some(Protocol::ZeroShot),
            "transfer" => Some(Protocol::Transfer),
            _ => None,
        }
    }
}

/// Which dataset a split item indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Id,
    Ood,
    /// The second OOD set of the transfer protocol.
    OodTransfer,
    /// [`ProtocolSplit::crafted`], built from ID training examples.
    Crafted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitItem {
    pub source: Source,
    pub index: usize,
    /// 0 = ID, 1 = OOD.
    pub label: u8,
}

/// Requested examples per class. Few-shot training always uses
/// [`FEW_SHOT_PER_CLASS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train_per_class: usize,
    pub eval_per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSplit {
    pub protocol: Protocol,
    pub train: Vec<SplitItem>,
    pub eval: Vec<SplitItem>,
    /// Permuted copies of the ID training examples (zero-shot only);
    /// crafted item `i` comes from ID example `crafted_from[i]`.
    pub crafted: Option<ImageDataset>,
    pub crafted_from: Vec<usize>,
}

impl ProtocolSplit {
    /// Fails if any underlying ID or OOD example feeds both training and
    /// evaluation.
    pub fn audit(&self) -> Result<()> {
        let origin = |it: &SplitItem| match it.source {
            Source::Crafted => (Source::Id, self.crafted_from[it.index]),
            s => (s, it.index),
        };
        let train: BTreeSet<_> = self.train.iter().map(origin).collect();
        if let Some(hit) = self.eval.iter().map(origin).find(|o| train.contains(o)) {
            return Err(Error::Infeasible(format!("split overlap: {:?} example {} is in both train and eval", hit.0, hit.1)));
        }
        Ok(())
    }
}

fn take(pool: &mut Vec<usize>, n: usize, what: &str, required: &str) -> Result<Vec<usize>> {
    if pool.len() < n {
        return Err(Error::Infeasible(format!("{what}: {required}, only {} available", pool.len())));
    }
    Ok(pool.split_off(pool.len() - n))
}

fn shuffled(n: usize, rng: &mut crate::rng::Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

fn items(source: Source, idx: &[usize], label: u8) -> impl Iterator<Item = SplitItem> + '_ {
    idx.iter().map(move |&index| SplitItem { source, index, label })
}

/// Samples a detector training and evaluation split. `ood_b` is the
/// evaluation OOD set of the transfer protocol and is ignored otherwise.
pub fn make_protocol_split(
    id: &ImageDataset,
    ood: &ImageDataset,
    ood_b: Option<&ImageDataset>,
    protocol: Protocol,
    seed: u64,
    sizes: SplitSizes,
) -> Result<ProtocolSplit> {
    let n_train = match protocol {
        Protocol::FewShot => FEW_SHOT_PER_CLASS,
        _ => sizes.train_per_class,
    };
    if n_train == 0 || sizes.eval_per_class == 0 {
        return Err(Error::Infeasible("train and eval sizes must be >= 1 per class".into()));
    }
    let mut rng = substream(seed, "split");
    let mut id_pool = shuffled(id.len(), &mut rng);
    let mut ood_pool = shuffled(ood.len(), &mut rng);
    let need = |n: usize| format!("{n} required");

    let id_train = take(&mut id_pool, n_train, "ID training examples", &need(n_train))?;
    let id_eval = take(&mut id_pool, sizes.eval_per_class, "ID evaluation examples", &need(sizes.eval_per_class))?;
    let mut train: Vec<SplitItem> = items(Source::Id, &id_train, 0).collect();
    let mut eval: Vec<SplitItem> = items(Source::Id, &id_eval, 0).collect();
    let mut crafted = None;
    let mut crafted_from = Vec::new();

    match protocol {
        Protocol::Full | Protocol::FewShot => {
            let what = if protocol == Protocol::FewShot { "few-shot OOD training examples" } else { "OOD training examples" };
            let tr = take(&mut ood_pool, n_train, what, &need(n_train))?;
            let ev = take(&mut ood_pool, sizes.eval_per_class, "OOD evaluation examples", &need(sizes.eval_per_class))?;
            train.extend(items(Source::Ood, &tr, 1));
            eval.extend(items(Source::Ood, &ev, 1));
        }
        Protocol::ZeroShot => {
            let base = id.subset(&id_train, format!("{}-train", id.name))?;
            crafted = Some(block_permute(&base, 8, BlockPermutation::Random(seed))?);
            crafted_from = id_train.clone();
            let all: Vec<usize> = (0..id_train.len()).collect();
            train.extend(items(Source::Crafted, &all, 1));
            let ev = take(&mut ood_pool, sizes.eval_per_class, "OOD evaluation examples", &need(sizes.eval_per_class))?;
            eval.extend(items(Source::Ood, &ev, 1));
        }
        Protocol::Transfer => {
            let b = ood_b.ok_or_else(|| Error::invalid("transfer protocol needs a second OOD set for evaluation"))?;
            let tr = take(&mut ood_pool, n_train, "OOD training examples (set A)", &need(n_train))?;
            let mut b_pool = shuffled(b.len(), &mut rng);
            let ev = take(&mut b_pool, sizes.eval_per_class, "OOD evaluation examples (set B)", &need(sizes.eval_per_class))?;
            train.extend(items(Source::Ood, &tr, 1));
            eval.extend(items(Source::OodTransfer, &ev, 1));
        }
    }
    let split = ProtocolSplit { protocol, train, eval, crafted, crafted_from };
    split.audit()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalization;
    use crate::Tensor;

    fn ds(n: usize, fill: f64) -> ImageDataset {
        ImageDataset::from_normalized(Tensor::full(&[n, 3, 32, 32], fill), alloc::vec![0; n], "d", Normalization::identity(3)).unwrap()
    }

    const SIZES: SplitSizes = SplitSizes { train_per_class: 20, eval_per_class: 30 };

    #[test]
    fn few_shot_uses_exactly_25_per_class() {
        let s = make_protocol_split(&ds(100, 0.0), &ds(100, 1.0), None, Protocol::FewShot, 0, SIZES).unwrap();
        assert_eq!(s.train.len(), 50);
        assert_eq!(s.train.iter().filter(|i| i.label == 1).count(), 25);
        assert_eq!(s.eval.len(), 60);
    }

    #[test]
    fn few_shot_with_ten_ood_examples_is_infeasible() {
        let err = make_protocol_split(&ds(100, 0.0), &ds(10, 1.0), None, Protocol::FewShot, 0, SIZES).unwrap_err();
        assert!(matches!(&err, Error::Infeasible(m) if m.contains("25 required")), "{err}");
    }

    #[test]
    fn zero_shot_trains_without_real_ood() {
        let id = ds(60, 0.0);
        let s = make_protocol_split(&id, &ds(40, 1.0), None, Protocol::ZeroShot, 3, SIZES).unwrap();
        assert!(s.train.iter().all(|i| i.source != Source::Ood));
        assert_eq!(s.train.iter().filter(|i| i.source == Source::Crafted).count(), 20);
        assert_eq!(s.crafted.as_ref().unwrap().len(), 20);
        assert!(s.eval.iter().any(|i| i.source == Source::Ood));
    }

    #[test]
    fn splits_are_disjoint_and_seeded() {
        for p in [Protocol::Full, Protocol::FewShot, Protocol::ZeroShot, Protocol::Transfer] {
            let b = ds(50, 2.0);
            let a = make_protocol_split(&ds(100, 0.0), &ds(80, 1.0), Some(&b), p, 7, SIZES).unwrap();
            a.audit().unwrap();
            let train: BTreeSet<_> = a.train.iter().filter(|i| i.source != Source::Crafted).map(|i| (i.source, i.index)).collect();
            assert!(a.eval.iter().all(|i| !train.contains(&(i.source, i.index))));
            assert_eq!(a, make_protocol_split(&ds(100, 0.0), &ds(80, 1.0), Some(&b), p, 7, SIZES).unwrap());
            assert_ne!(a.train, make_protocol_split(&ds(100, 0.0), &ds(80, 1.0), Some(&b), p, 8, SIZES).unwrap().train);
        }
    }

    #[test]
    fn transfer_evaluates_on_the_second_set() {
        let s = make_protocol_split(&ds(100, 0.0), &ds(30, 1.0), Some(&ds(40, 2.0)), Protocol::Transfer, 1, SIZES).unwrap();
        assert!(s.train.iter().filter(|i| i.label == 1).all(|i| i.source == Source::Ood));
        assert!(s.eval.iter().filter(|i| i.label == 1).all(|i| i.source == Source::OodTransfer));
        assert!(make_protocol_split(&ds(100, 0.0), &ds(30, 1.0), None, Protocol::Transfer, 1, SIZES).is_err());
    }

    #[test]
    fn audit_catches_overlap() {
        let mut s = make_protocol_split(&ds(100, 0.0), &ds(80, 1.0), None, Protocol::Full, 0, SIZES).unwrap();
        s.eval.push(s.train[0]);
        assert!(s.audit().is_err());
        let mut z = make_protocol_split(&ds(100, 0.0), &ds(80, 1.0), None, Protocol::ZeroShot, 0, SIZES).unwrap();
        z.eval.push(SplitItem { source: Source::Id, index: z.crafted_from[0], label: 0 });
        assert!(z.audit().is_err());
    }
}
