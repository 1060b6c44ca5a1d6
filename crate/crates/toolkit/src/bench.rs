//! Single-example inference latency: plain forward pass, forward pass with
//! NMD extraction, and the detector on top.

use std::hint::black_box;
use std::time::Instant;

use nmd_core::detector::{Detector, DetectorSpec};
use nmd_core::model::ConvNet;
use nmd_core::pipeline::Featurizer;
use nmd_core::{Scalar, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub repeats: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { repeats: 1000, warmup: 20 }
    }
}

/// Medians in milliseconds per single example.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub plain_forward_ms: f64,
    pub nmd_extract_ms: f64,
    pub detector_ms: f64,
    /// Median of extraction plus detector, measured per repetition.
    pub total_ms: f64,
    pub detector_train_s: Option<f64>,
    pub repeats: usize,
    pub precision: &'static str,
}

impl BenchReport {
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("plain_forward_ms".to_string(), self.plain_forward_ms),
            ("nmd_extract_ms".to_string(), self.nmd_extract_ms),
            ("detector_ms".to_string(), self.detector_ms),
            ("total_ms".to_string(), self.total_ms),
            ("extract_over_forward".to_string(), self.nmd_extract_ms / self.plain_forward_ms),
            ("repeats".to_string(), self.repeats as f64),
        ];
        if let Some(t) = self.detector_train_s {
            rows.push(("detector_train_s".to_string(), t));
        }
        rows
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Times each stage on `examples` (each `[1, C, H, W]`), cycling through
/// them, after `warmup` untimed rounds. The order of the forward and
/// extraction timings alternates between repetitions.
pub fn bench_inference<T: Scalar>(
    model: &ConvNet<T>,
    featurizer: &Featurizer,
    detector: &Detector,
    examples: &[Tensor<T>],
    config: BenchConfig,
) -> Result<BenchReport> {
    if config.repeats == 0 {
        return Err(Error::Usage("repeats must be >= 1".into()));
    }
    if examples.is_empty() {
        return Err(Error::Core(nmd_core::Error::Empty("benchmark examples")));
    }
    if featurizer.dim() != detector.input_dim() {
        return Err(Error::Core(nmd_core::Error::Shape {
            op: "bench",
            detail: format!("detector expects {} inputs, featurizer gives {}", detector.input_dim(), featurizer.dim()),
        }));
    }
    let forward = |x: &Tensor<T>| -> Result<f64> {
        let t = Instant::now();
        black_box(model.forward(black_box(x))?);
        Ok(ms(t))
    };
    let extract = |x: &Tensor<T>| -> Result<(f64, nmd_core::nmd::NmdVector)> {
        let t = Instant::now();
        let (logits, stats) = model.forward_with_stats(black_box(x))?;
        black_box(logits);
        let v = featurizer.vector(&stats)?;
        Ok((ms(t), v))
    };
    for i in 0..config.warmup {
        let x = &examples[i % examples.len()];
        forward(x)?;
        let (_, v) = extract(x)?;
        black_box(detector.score(&v.values)?);
    }
    let (mut fw, mut ex, mut de, mut tot) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..config.repeats {
        let x = &examples[i % examples.len()];
        let (tf, (te, v)) = if i % 2 == 0 {
            let tf = forward(x)?;
            (tf, extract(x)?)
        } else {
            let e = extract(x)?;
            (forward(x)?, e)
        };
        let t = Instant::now();
        black_box(detector.score(black_box(&v.values))?);
        let td = ms(t);
        fw.push(tf);
        ex.push(te);
        de.push(td);
        tot.push(te + td);
    }
    Ok(BenchReport {
        plain_forward_ms: median(&mut fw),
        nmd_extract_ms: median(&mut ex),
        detector_ms: median(&mut de),
        total_ms: median(&mut tot),
        detector_train_s: None,
        repeats: config.repeats,
        precision: T::NAME,
    })
}

/// Wall-clock seconds to train `spec` on the given vectors.
pub fn time_detector_training<R: AsRef<[f64]>>(spec: &DetectorSpec, rows: &[R], labels: &[u8]) -> Result<f64> {
    let t = Instant::now();
    black_box(spec.train(rows, labels)?);
    Ok(t.elapsed().as_secs_f64())
}
