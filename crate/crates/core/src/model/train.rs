use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;

use super::ConvNet;
use crate::nn::Sgd;
use crate::rng::substream;
use crate::{math, Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to 0 over all steps.
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            schedule: LrSchedule::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss of every SGD step, in order.
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    /// Training-mode accuracy accumulated over each epoch.
    pub epoch_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn train_classifier<T: Scalar>(
    model: &mut ConvNet<T>,
    images: &Tensor<T>,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_classifier_with(model, images, labels, config, |_| {})
}

/// Minibatch SGD with momentum over every trainable parameter. BN layers run
/// in train mode, so their running averages accumulate one update per step;
/// after this returns they are only read.
pub fn train_classifier_with<T: Scalar>(
    model: &mut ConvNet<T>,
    images: &Tensor<T>,
    labels: &[usize],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainReport> {
    let n = images.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    if labels.len() != n {
        return Err(Error::shape("train_classifier", alloc::format!("{} labels for {} images", labels.len(), n)));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.momentum) {
        return Err(Error::invalid("need lr > 0 and momentum in [0, 1)"));
    }

    let mut rng = substream(config.seed, "train");
    let mut order: Vec<usize> = (0..n).collect();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut sgd = Sgd::new(config.lr, config.momentum, config.weight_decay);
    let mut report = TrainReport { step_losses: Vec::new(), epoch_losses: Vec::new(), epoch_accuracy: Vec::new() };
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = images.select(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let pass = model.train_pass(&x)?;
            let (loss, grad_logits) = crate::nn::cross_entropy_loss(&pass.logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step: bi, loss });
            }
            correct += count_correct(&pass.logits, &y);
            let grads = model.backward(&pass, &grad_logits)?;
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, step: bi, loss: f64::NAN });
            }
            model.update_running(&pass.bn_stats);
            sgd.lr = match config.schedule {
                LrSchedule::Constant => config.lr,
                LrSchedule::Cosine => 0.5 * config.lr * (1.0 + math::cos(PI * step as f64 / total_steps as f64)),
            };
            sgd.step(&mut model.parameters_mut(), &grads);
            report.step_losses.push(loss);
            loss_sum += loss * chunk.len() as f64;
            step += 1;
        }
        let summary = EpochSummary { epoch, loss: loss_sum / n as f64, accuracy: correct as f64 / n as f64 };
        report.epoch_losses.push(summary.loss);
        report.epoch_accuracy.push(summary.accuracy);
        on_epoch(&summary);
    }
    Ok(report)
}

pub(crate) fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.dim(1);
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
