//! Checkpoint (`CKPT`), reference sidecar (`REFS`) and detector (`DETR`)
//! files.

use std::path::Path;
use std::sync::Arc;

use nmd_core::data::Normalization;
use nmd_core::detector::{Detector, LrDetector, MlpConfig, MlpDetector, Standardizer};
use nmd_core::model::{BlockSpec, ChannelIndex, ConvBlock, ConvNet, ConvNetConfig};
use nmd_core::nmd::{PairStandardizer, ReferenceSource, ReferenceStats, VectorKind};
use nmd_core::nn::{BatchNorm2d, Conv2d, Linear};
use nmd_core::pipeline::Featurizer;

use crate::envelope::*;
use crate::error::{read_file, write_atomic, Error, Result};

/// A trained model with the normalization its inputs expect.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ConvNet,
    pub normalization: Normalization,
}

fn invalid<E: std::fmt::Display>(e: E) -> DecodeError {
    DecodeError::Invalid(e.to_string())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new(TAG_CHECKPOINT);
    let cfg = ck.model.config();
    w.tag(*b"CNFG");
    w.usize(cfg.in_channels);
    w.usize(cfg.input_size);
    w.usize(cfg.blocks.len());
    for b in &cfg.blocks {
        w.usizes(&[b.out_channels, b.kernel, b.stride, b.padding]);
    }
    w.usize(cfg.pool);
    w.usize(cfg.num_classes);
    w.u8(cfg.batch_norm as u8);
    w.f64(cfg.bn_momentum);
    w.f64(cfg.bn_eps);
    w.tag(*b"NORM");
    w.f64s(&ck.normalization.mean);
    w.f64s(&ck.normalization.std);
    for blk in ck.model.blocks() {
        w.tag(*b"CONV");
        w.tensor(&blk.conv.weight);
        w.tensor(&blk.conv.bias);
        w.usize(blk.conv.stride);
        w.usize(blk.conv.padding);
        if let Some(bn) = &blk.bn {
            w.tag(*b"BN2D");
            w.tensor(&bn.gamma);
            w.tensor(&bn.beta);
            w.tensor(&bn.running_mean);
            w.tensor(&bn.running_var);
            w.f64(bn.momentum());
            w.f64(bn.eps());
            w.u64(bn.updates());
        }
    }
    w.tag(*b"FCLN");
    w.tensor(&ck.model.fc().weight);
    w.tensor(&ck.model.fc().bias);
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> DecodeResult<Checkpoint> {
    let mut r = Reader::open(bytes, TAG_CHECKPOINT)?;
    r.expect_tag(*b"CNFG")?;
    let in_channels = r.usize()?;
    let input_size = r.usize()?;
    let nblocks = r.usize()?;
    if nblocks > 64 {
        return Err(DecodeError::Invalid(format!("{nblocks} blocks is implausible")));
    }
    let mut blocks_cfg = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let v = r.usizes()?;
        let [out_channels, kernel, stride, padding] = v[..] else {
            return Err(DecodeError::Invalid("block spec needs 4 fields".into()));
        };
        blocks_cfg.push(BlockSpec { out_channels, kernel, stride, padding });
    }
    let pool = r.usize()?;
    let num_classes = r.usize()?;
    let batch_norm = r.u8()? != 0;
    let bn_momentum = r.f64()?;
    let bn_eps = r.f64()?;
    let config = ConvNetConfig { in_channels, input_size, blocks: blocks_cfg, pool, num_classes, batch_norm, bn_momentum, bn_eps };
    r.expect_tag(*b"NORM")?;
    let normalization = Normalization::new(r.f64s()?, r.f64s()?).map_err(invalid)?;
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        r.expect_tag(*b"CONV")?;
        let (weight, bias) = (r.tensor()?, r.tensor()?);
        let (stride, padding) = (r.usize()?, r.usize()?);
        let conv = Conv2d::new(weight, bias, stride, padding).map_err(invalid)?;
        let bn = if batch_norm {
            r.expect_tag(*b"BN2D")?;
            let (g, b, m, v) = (r.tensor()?, r.tensor()?, r.tensor()?, r.tensor()?);
            let (momentum, eps, updates) = (r.f64()?, r.f64()?, r.u64()?);
            Some(BatchNorm2d::from_parts(g, b, m, v, momentum, eps, updates).map_err(invalid)?)
        } else {
            None
        };
        blocks.push(ConvBlock { conv, bn });
    }
    r.expect_tag(*b"FCLN")?;
    let fc = Linear::new(r.tensor()?, r.tensor()?).map_err(invalid)?;
    r.finish()?;
    let model = ConvNet::from_parts(config, blocks, fc).map_err(invalid)?;
    if normalization.channels() != in_channels {
        return Err(DecodeError::Invalid("normalization does not match input channels".into()));
    }
    Ok(Checkpoint { model, normalization })
}

pub fn encode_refs(r: &ReferenceStats) -> Vec<u8> {
    let mut w = Writer::new(TAG_REFS);
    w.u8(match r.source {
        ReferenceSource::BnFreeLunch => 0,
        ReferenceSource::DatasetTraversal => 1,
    });
    w.u64(r.sample_count);
    let per: Vec<usize> = (0..r.channels.layers()).map(|l| r.channels.channels_in(l)).collect();
    w.usizes(&per);
    w.f64s(&r.mean);
    w.f64s(&r.var);
    w.finish()
}

pub fn decode_refs(bytes: &[u8]) -> DecodeResult<ReferenceStats> {
    let mut r = Reader::open(bytes, TAG_REFS)?;
    let source = match r.u8()? {
        0 => ReferenceSource::BnFreeLunch,
        1 => ReferenceSource::DatasetTraversal,
        s => return Err(DecodeError::Invalid(format!("unknown reference source {s}"))),
    };
    let count = r.u64()?;
    let channels = Arc::new(ChannelIndex::new(&r.usizes()?));
    let (mean, var) = (r.f64s()?, r.f64s()?);
    r.finish()?;
    ReferenceStats::new(mean, var, source, count, channels).map_err(invalid)
}

/// A trained detector with the vector kind it consumes and, for
/// concatenated vectors, the half standardizers.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorFile {
    pub detector: Detector,
    pub kind: VectorKind,
    pub pair: Option<PairStandardizer>,
}

impl DetectorFile {
    pub fn from_featurizer(detector: Detector, f: &Featurizer) -> Self {
        DetectorFile { detector, kind: f.kind, pair: f.pair.clone() }
    }

    /// Pairs the stored vector settings with a reference.
    pub fn featurizer(&self, reference: ReferenceStats) -> Result<Featurizer> {
        let f = Featurizer { kind: self.kind, reference, pair: self.pair.clone() };
        if f.dim() != self.detector.input_dim() {
            return Err(Error::Core(nmd_core::Error::Shape {
                op: "detector",
                detail: format!("detector expects {} inputs but the model and reference give {}", self.detector.input_dim(), f.dim()),
            }));
        }
        if let Some(p) = &f.pair {
            if p.nmd.dim() != f.reference.len() || p.nvd.dim() != f.reference.len() {
                return Err(Error::Core(nmd_core::Error::Shape { op: "detector", detail: "concatenation standardizers do not match the reference".into() }));
            }
        }
        Ok(f)
    }
}

fn put_standardizer(w: &mut Writer, s: &Standardizer) {
    w.f64s(&s.mean);
    w.f64s(&s.std);
}

fn get_standardizer(r: &mut Reader<'_>) -> DecodeResult<Standardizer> {
    let (mean, std) = (r.f64s()?, r.f64s()?);
    if mean.len() != std.len() || std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(DecodeError::Invalid("malformed standardizer".into()));
    }
    Ok(Standardizer { mean, std })
}

fn kind_code(k: VectorKind) -> u8 {
    match k {
        VectorKind::Nmd => 0,
        VectorKind::Nvd => 1,
        VectorKind::NmdConcatNvd => 2,
    }
}

pub fn encode_detector(d: &DetectorFile) -> Vec<u8> {
    let mut w = Writer::new(TAG_DETECTOR);
    w.tag(*b"FEAT");
    w.u8(kind_code(d.kind));
    match &d.pair {
        Some(p) => {
            w.u8(1);
            put_standardizer(&mut w, &p.nmd);
            put_standardizer(&mut w, &p.nvd);
        }
        None => w.u8(0),
    }
    match &d.detector {
        Detector::Lr(lr) => {
            w.tag(*b"LRDT");
            put_standardizer(&mut w, &lr.standardizer);
            w.f64s(&lr.weights);
            w.f64(lr.bias);
        }
        Detector::Mlp(m) => {
            w.tag(*b"MLPD");
            put_standardizer(&mut w, &m.standardizer);
            let c = &m.config;
            w.usizes(&[c.hidden, c.epochs, c.batch_size]);
            w.f64s(&[c.dropout, c.lr, c.momentum]);
            w.u64(c.seed);
            for l in &m.layers {
                w.tensor(&l.weight);
                w.tensor(&l.bias);
            }
        }
    }
    w.finish()
}

pub fn decode_detector(bytes: &[u8]) -> DecodeResult<DetectorFile> {
    let mut r = Reader::open(bytes, TAG_DETECTOR)?;
    r.expect_tag(*b"FEAT")?;
    let kind = match r.u8()? {
        0 => VectorKind::Nmd,
        1 => VectorKind::Nvd,
        2 => VectorKind::NmdConcatNvd,
        k => return Err(DecodeError::Invalid(format!("unknown vector kind {k}"))),
    };
    let pair = match r.u8()? {
        0 => None,
        _ => Some(PairStandardizer { nmd: get_standardizer(&mut r)?, nvd: get_standardizer(&mut r)? }),
    };
    if (kind == VectorKind::NmdConcatNvd) != pair.is_some() {
        return Err(DecodeError::Invalid("concatenation standardizers present iff vector kind is concat".into()));
    }
    let detector = match &r.tag()? {
        b"LRDT" => {
            let standardizer = get_standardizer(&mut r)?;
            let weights = r.f64s()?;
            let bias = r.f64()?;
            if weights.len() != standardizer.dim() {
                return Err(DecodeError::Invalid("LR weights do not match standardizer".into()));
            }
            Detector::Lr(LrDetector { weights, bias, standardizer })
        }
        b"MLPD" => {
            let standardizer = get_standardizer(&mut r)?;
            let u = r.usizes()?;
            let f = r.f64s()?;
            let seed = r.u64()?;
            let [hidden, epochs, batch_size] = <[usize; 3]>::try_from(&u[..]).map_err(invalid)?;
            let [dropout, lr, momentum] = <[f64; 3]>::try_from(&f[..]).map_err(invalid)?;
            let mut layers = Vec::with_capacity(3);
            for _ in 0..3 {
                layers.push(Linear::new(r.tensor()?, r.tensor()?).map_err(invalid)?);
            }
            let layers: [Linear; 3] = layers.try_into().expect("three layers");
            if layers[0].in_features() != standardizer.dim() || layers[0].out_features() != hidden || layers[1].out_features() != hidden || layers[2].out_features() != 1 {
                return Err(DecodeError::Invalid("MLP layer shapes do not chain".into()));
            }
            let config = MlpConfig { hidden, dropout, lr, momentum, epochs, batch_size, seed };
            Detector::Mlp(MlpDetector { layers, standardizer, config })
        }
        t => return Err(DecodeError::Invalid(format!("unknown detector record {}", String::from_utf8_lossy(t)))),
    };
    r.finish()?;
    Ok(DetectorFile { detector, kind, pair })
}

fn load<T>(path: &Path, decode: impl Fn(&[u8]) -> DecodeResult<T>) -> Result<T> {
    decode(&read_file(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load(path, decode_checkpoint)
}

pub fn save_refs(r: &ReferenceStats, path: &Path) -> Result<()> {
    write_atomic(path, &encode_refs(r))
}

pub fn load_refs(path: &Path) -> Result<ReferenceStats> {
    load(path, decode_refs)
}

pub fn save_detector(d: &DetectorFile, path: &Path) -> Result<()> {
    write_atomic(path, &encode_detector(d))
}

pub fn load_detector(path: &Path) -> Result<DetectorFile> {
    load(path, decode_detector)
}
