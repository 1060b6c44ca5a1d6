//! Byte layouts for image batches.
//!
//! CIFAR binary batches are a bare sequence of records, one label byte then
//! 3072 pixel bytes (1024 each of R, G, B, row-major). The raw layout is
//! `n·3·h·w` pixel bytes in the same plane order, optionally followed by `n`
//! label bytes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{ImageDataset, Normalization};
use crate::{Error, Result, Tensor};

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;

fn pixels_from_bytes(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes.iter().map(|&b| b as f64 / 255.0)
}

fn bytes_from_pixels(ds: &ImageDataset) -> Vec<u8> {
    ds.pixels().data().iter().map(|&v| num_traits::Float::round(v.clamp(0.0, 1.0) * 255.0) as u8).collect()
}

pub fn decode_cifar(bytes: &[u8], name: impl Into<String>, normalization: Normalization) -> Result<ImageDataset> {
    if bytes.is_empty() {
        return Err(Error::Empty("CIFAR batch"));
    }
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "CIFAR batch of {} bytes is not a whole number of {CIFAR_RECORD}-byte records (truncated or wrong record size)",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0] as usize);
        data.extend(pixels_from_bytes(&rec[1..]));
    }
    ImageDataset::from_pixels(&Tensor::from_vec(&[n, 3, 32, 32], data)?, labels, name, normalization)
}

pub fn encode_cifar(ds: &ImageDataset) -> Result<Vec<u8>> {
    if ds.channels() != 3 || ds.height() != 32 || ds.width() != 32 {
        return Err(Error::shape("encode_cifar", format!("{:?} is not 3×32×32", &ds.images.shape()[1..])));
    }
    if let Some(&l) = ds.labels.iter().find(|&&l| l > 255) {
        return Err(Error::invalid(format!("label {l} does not fit in a byte")));
    }
    let px = bytes_from_pixels(ds);
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (i, chunk) in px.chunks_exact(CIFAR_PIXELS).enumerate() {
        out.push(ds.labels[i] as u8);
        out.extend_from_slice(chunk);
    }
    Ok(out)
}

/// Decodes `n` RGB `h×w` images; labels default to 0 when absent.
pub fn decode_raw_u8(bytes: &[u8], n: usize, h: usize, w: usize, name: impl Into<String>, normalization: Normalization) -> Result<ImageDataset> {
    let px = n * 3 * h * w;
    if px == 0 {
        return Err(Error::Empty("raw image batch"));
    }
    let labels = if bytes.len() == px {
        alloc::vec![0; n]
    } else if bytes.len() == px + n {
        bytes[px..].iter().map(|&b| b as usize).collect()
    } else {
        return Err(Error::Format(format!("raw batch has {} bytes, expected {px} or {} for {n}×3×{h}×{w}", bytes.len(), px + n)));
    };
    let data = pixels_from_bytes(&bytes[..px]).collect();
    ImageDataset::from_pixels(&Tensor::from_vec(&[n, 3, h, w], data)?, labels, name, normalization)
}

pub fn encode_raw_u8(ds: &ImageDataset, with_labels: bool) -> Result<Vec<u8>> {
    if ds.channels() != 3 {
        return Err(Error::shape("encode_raw_u8", format!("{} channels, expected 3", ds.channels())));
    }
    let mut out = bytes_from_pixels(ds);
    if with_labels {
        for &l in &ds.labels {
            out.push(u8::try_from(l).map_err(|_| Error::invalid(format!("label {l} does not fit in a byte")))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..CIFAR_PIXELS).map(fill));
        r
    }

    #[test]
    fn white_record_decodes_to_ones() {
        let ds = decode_cifar(&record(7, |_| 255), "w", Normalization::identity(3)).unwrap();
        assert_eq!(ds.labels, vec![7]);
        assert!(ds.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn record_count_and_plane_order() {
        let mut bytes = Vec::new();
        for l in 0..3 {
            bytes.extend(record(l, |j| (j / 1024) as u8 * 100));
        }
        let ds = decode_cifar(&bytes, "three", Normalization::identity(3)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.images.item(2)[1024], 100.0 / 255.0);
        assert_eq!(ds.images.item(2)[2048], 200.0 / 255.0);
    }

    #[test]
    fn bad_lengths() {
        let mut bytes = record(0, |_| 1);
        bytes.pop();
        assert!(matches!(decode_cifar(&bytes, "t", Normalization::identity(3)), Err(Error::Format(_))));
        assert!(decode_cifar(&[], "t", Normalization::identity(3)).is_err());
        assert!(matches!(decode_raw_u8(&[0; 11], 1, 2, 2, "r", Normalization::identity(3)), Err(Error::Format(_))));
    }

    #[test]
    fn cifar_round_trip() {
        let mut bytes = Vec::new();
        for l in 0..4u8 {
            bytes.extend(record(l, |j| ((j * 31 + l as usize * 7) % 256) as u8));
        }
        let norm = Normalization::new(vec![0.49, 0.48, 0.45], vec![0.25, 0.24, 0.26]).unwrap();
        let ds = decode_cifar(&bytes, "rt", norm.clone()).unwrap();
        let again = decode_cifar(&encode_cifar(&ds).unwrap(), "rt", norm).unwrap();
        assert_eq!(encode_cifar(&ds).unwrap(), bytes);
        assert_eq!(ds, again);
    }

    #[test]
    fn raw_round_trip_and_labels() {
        let bytes: Vec<u8> = (0..2 * 3 * 4 * 4).map(|j| (j * 5 % 256) as u8).chain([3u8, 9]).collect();
        let ds = decode_raw_u8(&bytes, 2, 4, 4, "raw", Normalization::identity(3)).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(encode_raw_u8(&ds, true).unwrap(), bytes);
        let unlabeled = decode_raw_u8(&bytes[..96], 2, 4, 4, "raw", Normalization::identity(3)).unwrap();
        assert_eq!(unlabeled.labels, vec![0, 0]);
        assert_eq!(unlabeled.len(), 2);
        let white = decode_raw_u8(&[255; 12], 1, 2, 2, "w", Normalization::identity(3)).unwrap();
        assert!(white.images.data().iter().all(|&v| v == 1.0));
    }
}
