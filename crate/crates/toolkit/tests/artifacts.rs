use nmd_core::data::{Normalization, SynthSpec};
use nmd_core::detector::{DetectorSpec, LrConfig, MlpConfig};
use nmd_core::model::{train_classifier, ConvNet, ConvNetConfig, TrainConfig};
use nmd_core::nmd::{reference_from_bn, reference_from_dataset, VectorKind};
use nmd_core::pipeline::{example_stats, Featurizer};
use nmd_toolkit::artifacts::*;
use nmd_toolkit::envelope::{DecodeError, MAGIC};

fn small_checkpoint() -> (Checkpoint, nmd_core::data::ImageDataset) {
    let spec = SynthSpec::in_distribution();
    let (px, labels) = spec.sample_pixels(24, 5).unwrap();
    let norm = Normalization::fit(&px).unwrap();
    let data = nmd_core::data::ImageDataset::from_pixels(&px, labels, "id", norm.clone()).unwrap();
    let mut model = ConvNet::build(ConvNetConfig::convnet4_with_width(10, 6), 3).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() };
    train_classifier(&mut model, &data.images, &data.labels, &cfg).unwrap();
    (Checkpoint { model, normalization: norm }, data)
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (ck, data) = small_checkpoint();
    let bytes = encode_checkpoint(&ck);
    assert_eq!(&bytes[..4], MAGIC);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(encode_checkpoint(&back), bytes);
    let a = ck.model.forward(&data.images).unwrap();
    let b = back.model.forward(&data.images).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn refs_round_trip_both_sources() {
    let (ck, data) = small_checkpoint();
    for r in [reference_from_bn(&ck.model).unwrap(), reference_from_dataset(&ck.model, &data.images, 7).unwrap()] {
        let back = decode_refs(&encode_refs(&r)).unwrap();
        assert_eq!(back.mean, r.mean);
        assert_eq!(back.var, r.var);
        assert_eq!(back.source, r.source);
        assert_eq!(back.sample_count, r.sample_count);
        assert_eq!(*back.channels, *r.channels);
    }
}

#[test]
fn detector_round_trip_preserves_scores() {
    let (ck, data) = small_checkpoint();
    let reference = reference_from_bn(&ck.model).unwrap();
    let stats = example_stats(&ck.model, &data.images, 8).unwrap();
    let labels: Vec<u8> = (0..stats.len()).map(|i| (i % 2) as u8).collect();
    for kind in [VectorKind::Nmd, VectorKind::NmdConcatNvd] {
        let f = Featurizer::fit(kind, reference.clone(), &stats).unwrap();
        let rows = f.vectors(&stats).unwrap();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|v| v.values).collect();
        for spec in [DetectorSpec::Lr(LrConfig::default()), DetectorSpec::Mlp(MlpConfig { hidden: 8, epochs: 3, ..MlpConfig::default() })] {
            let det = spec.train(&rows, &labels).unwrap();
            let file = DetectorFile::from_featurizer(det.clone(), &f);
            let back = decode_detector(&encode_detector(&file)).unwrap();
            assert_eq!(back, file);
            let f2 = back.featurizer(reference.clone()).unwrap();
            for st in &stats {
                let v1 = f.vector(st).unwrap();
                let v2 = f2.vector(st).unwrap();
                assert_eq!(det.score(&v1.values).unwrap(), back.detector.score(&v2.values).unwrap());
            }
        }
    }
}

#[test]
fn bad_magic_is_rejected() {
    let (ck, _) = small_checkpoint();
    let mut bytes = encode_checkpoint(&ck);
    bytes[0] = b'X';
    let err = decode_checkpoint(&bytes).unwrap_err();
    assert_eq!(err, DecodeError::BadMagic);
    assert!(err.to_string().contains("bad magic"));
}

#[test]
fn future_version_is_rejected() {
    let (ck, _) = small_checkpoint();
    let mut bytes = encode_checkpoint(&ck);
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert_eq!(decode_checkpoint(&bytes).unwrap_err(), DecodeError::Version(2));
}

#[test]
fn every_truncation_is_an_error() {
    let (ck, _) = small_checkpoint();
    let bytes = encode_checkpoint(&ck);
    let step = (bytes.len() / 500).max(1);
    for len in (0..bytes.len()).step_by(step).chain([bytes.len() - 1]) {
        assert!(decode_checkpoint(&bytes[..len]).is_err(), "prefix of {len} bytes decoded");
    }
    let r = reference_from_bn(&ck.model).unwrap();
    let rb = encode_refs(&r);
    for len in 0..rb.len() {
        assert!(decode_refs(&rb[..len]).is_err());
    }
}

#[test]
fn trailing_bytes_are_rejected() {
    let (ck, _) = small_checkpoint();
    let mut bytes = encode_refs(&reference_from_bn(&ck.model).unwrap());
    bytes.push(0);
    assert!(decode_refs(&bytes).is_err());
}

#[test]
fn wrong_file_kind_is_rejected() {
    let (ck, _) = small_checkpoint();
    let refs = encode_refs(&reference_from_bn(&ck.model).unwrap());
    assert!(matches!(decode_checkpoint(&refs), Err(DecodeError::WrongTag { .. })));
}

#[test]
fn save_and_load_through_files() {
    let (ck, _) = small_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.nmdk");
    save_checkpoint(&ck, &p).unwrap();
    assert_eq!(load_checkpoint(&p).unwrap(), ck);
    assert!(!dir.path().join("model.nmdk.partial").exists());
}
