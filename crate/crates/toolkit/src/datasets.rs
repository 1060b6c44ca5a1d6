//! Dataset sources for the command line.
//!
//! A source string is one of
//!
//! - `synth:<preset>` with preset `id`, `far-ood`, `near-ood` or `texture-ood`;
//! - a directory of CIFAR binary batches (`data_batch_*.bin`, falling back
//!   to `test_batch.bin`);
//! - a single `.bin` CIFAR batch file;
//! - any other path: a `key=value` dataset config.
//!
//! Dataset config keys: `format` (`cifar`, `raw` or `synth`), `path`
//! (relative to the config file), `name`, `n`, `height`/`width` and
//! `labels` (raw only), `split` (`train` or `test`, CIFAR directories),
//! `mean`/`std` (comma-separated per-channel normalization), `preset` and
//! `seed` (synthetic only).

use std::path::{Path, PathBuf};

use nmd_core::data::{decode_cifar, decode_raw_u8, ImageDataset, Normalization, SynthSpec};
use nmd_core::Tensor;

use crate::config::KeyValues;
use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Cap on the number of examples (synthetic sources generate exactly this many).
    pub n: Option<usize>,
    pub seed: u64,
    /// Normalization to apply; otherwise the source's declared constants,
    /// or constants fitted on the loaded pixels.
    pub normalization: Option<Normalization>,
}

const DEFAULT_SYNTH_N: usize = 1000;

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn finish(pixels: Tensor, labels: Vec<usize>, name: String, declared: Option<Normalization>, opts: &LoadOptions) -> Result<ImageDataset> {
    let (pixels, labels) = match opts.n {
        Some(n) if n < labels.len() => {
            let idx: Vec<usize> = (0..n).collect();
            (pixels.select(&idx), labels[..n].to_vec())
        }
        _ => (pixels, labels),
    };
    if labels.is_empty() {
        return Err(Error::Core(nmd_core::Error::Empty("dataset")));
    }
    let norm = match (&opts.normalization, declared) {
        (Some(n), _) => n.clone(),
        (None, Some(d)) => d,
        (None, None) => Normalization::fit(&pixels)?,
    };
    Ok(ImageDataset::from_pixels(&pixels, labels, name, norm)?)
}

fn synth(preset: &str, seed: u64, n: Option<usize>, declared: Option<Normalization>, opts: &LoadOptions) -> Result<ImageDataset> {
    let spec = SynthSpec::preset(preset).ok_or_else(|| usage(format!("unknown synthetic preset {preset:?} (id, far-ood, near-ood, texture-ood)")))?;
    let (px, labels) = spec.sample_pixels(n.or(opts.n).unwrap_or(DEFAULT_SYNTH_N), seed)?;
    finish(px, labels, spec.name, declared, opts)
}

fn cifar_files(dir: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "bin")).collect();
    names.sort();
    let pick = |pred: &dyn Fn(&str) -> bool| -> Vec<PathBuf> {
        names.iter().filter(|p| p.file_name().and_then(|f| f.to_str()).is_some_and(pred)).cloned().collect()
    };
    let files = match split {
        "test" => pick(&|f| f.starts_with("test_batch")),
        _ => pick(&|f| f.starts_with("data_batch")),
    };
    let files = if files.is_empty() && split != "test" { pick(&|f| f.starts_with("test_batch")) } else { files };
    if files.is_empty() {
        return Err(Error::format(dir, "no CIFAR batch files (*.bin) found"));
    }
    Ok(files)
}

fn cifar(files: &[PathBuf], name: String, declared: Option<Normalization>, opts: &LoadOptions) -> Result<ImageDataset> {
    let mut parts = Vec::with_capacity(files.len());
    for f in files {
        let bytes = read_file(f)?;
        let ds = decode_cifar(&bytes, name.clone(), Normalization::identity(3)).map_err(|e| Error::format(f, e.to_string()))?;
        parts.push(ds);
        if opts.n.is_some_and(|n| parts.iter().map(ImageDataset::len).sum::<usize>() >= n) {
            break;
        }
    }
    let images: Vec<&Tensor> = parts.iter().map(|p| &p.images).collect();
    let pixels = Tensor::concat(&images)?;
    let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
    finish(pixels, labels, name, declared, opts)
}

fn from_config(path: &Path, opts: &LoadOptions) -> Result<ImageDataset> {
    let kv = KeyValues::load(path)?;
    let bad = |m: String| Error::format(path, m);
    let declared = match (kv.floats("mean").map_err(bad)?, kv.floats("std").map_err(bad)?) {
        (Some(m), Some(s)) => Some(Normalization::new(m, s).map_err(|e| Error::format(path, e.to_string()))?),
        (None, None) => None,
        _ => return Err(Error::format(path, "mean and std must be declared together")),
    };
    let n = kv.parse_as::<usize>("n").map_err(bad)?;
    let opts = LoadOptions { n: n.or(opts.n), ..opts.clone() };
    let base = path.parent().unwrap_or(Path::new("."));
    let data_path = || -> Result<PathBuf> { Ok(base.join(kv.get("path").ok_or_else(|| Error::format(path, "missing key path"))?)) };
    let format = kv.get("format").unwrap_or("cifar");
    let name = kv.get("name").map(str::to_string);
    match format {
        "synth" => {
            let preset = kv.get("preset").unwrap_or("id");
            let seed = kv.parse_as::<u64>("seed").map_err(bad)?.unwrap_or(opts.seed);
            let mut ds = synth(preset, seed, opts.n, declared, &opts)?;
            if let Some(nm) = name {
                ds.name = nm;
            }
            Ok(ds)
        }
        "cifar" => {
            let p = data_path()?;
            let files = if p.is_dir() { cifar_files(&p, kv.get("split").unwrap_or("train"))? } else { vec![p] };
            cifar(&files, name.unwrap_or_else(|| "cifar".into()), declared, &opts)
        }
        "raw" => {
            let p = data_path()?;
            let need = |k: &str| -> Result<usize> { kv.parse_as::<usize>(k).map_err(bad)?.ok_or_else(|| Error::format(path, format!("raw format needs key {k}"))) };
            let (h, w) = (need("height")?, need("width")?);
            let bytes = read_file(&p)?;
            let with_labels = kv.get("labels") == Some("true");
            let per = 3 * h * w + with_labels as usize;
            if per == 0 || bytes.len() % per != 0 {
                return Err(Error::format(&p, format!("{} bytes is not a whole number of {h}×{w} images", bytes.len())));
            }
            let count = bytes.len() / per;
            let ds = decode_raw_u8(&bytes, count, h, w, "raw", Normalization::identity(3)).map_err(|e| Error::format(&p, e.to_string()))?;
            finish(ds.images, ds.labels, name.unwrap_or_else(|| "raw".into()), declared, &opts)
        }
        other => Err(Error::format(path, format!("unknown dataset format {other:?}"))),
    }
}

pub fn load_dataset(source: &str, opts: &LoadOptions) -> Result<ImageDataset> {
    if let Some(preset) = source.strip_prefix("synth:") {
        return synth(preset, opts.seed, None, None, opts);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
    }
    if path.is_dir() {
        return cifar(&cifar_files(path, "train")?, "cifar".into(), None, opts);
    }
    if path.extension().is_some_and(|x| x == "bin") {
        return cifar(&[path.to_path_buf()], "cifar".into(), None, opts);
    }
    from_config(path, opts)
}
