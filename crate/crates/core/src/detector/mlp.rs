use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{check_training_set, Standardizer};
use crate::nn::{normal_tensor, relu, relu_backward, Linear, Sgd};
use crate::rng::{substream, Rng};
use crate::{math, Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: 128, dropout: 0.5, lr: 0.001, momentum: 0.9, epochs: 200, batch_size: 16, seed: 0 }
    }
}

/// `D → h → h → 1` perceptron with ReLU after the first two layers and
/// dropout after the second; the output is the logit of "OOD".
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDetector {
    pub layers: [Linear; 3],
    pub standardizer: Standardizer,
    pub config: MlpConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpFitReport {
    pub epoch_losses: Vec<f64>,
}

struct Pass {
    x: Tensor,
    pre1: Tensor,
    h1: Tensor,
    pre2: Tensor,
    h2d: Tensor,
    mask: Option<Vec<f64>>,
    logits: Tensor,
}

impl MlpDetector {
    /// Freshly initialized network (Kaiming hidden layers, a `1/√h`-scaled
    /// output layer so initial scores sit near 0.5).
    pub fn init(standardizer: Standardizer, config: MlpConfig) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::invalid("MLP hidden width must be >= 1"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::invalid("dropout probability must lie in [0, 1)"));
        }
        let d = standardizer.dim();
        let h = config.hidden;
        let mut rng = substream(config.seed, "mlp-init");
        let out = Linear::new(normal_tensor(&[1, h], math::sqrt(1.0 / h as f64) * 0.5, &mut rng), Tensor::zeros(&[1]))?;
        let layers = [Linear::kaiming(d, h, &mut rng)?, Linear::kaiming(h, h, &mut rng)?, out];
        Ok(MlpDetector { layers, standardizer, config })
    }

    pub fn input_dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    fn forward(&self, x: Tensor, dropout: Option<&mut Rng>) -> Result<Pass> {
        let pre1 = self.layers[0].forward(&x)?;
        let h1 = relu(&pre1);
        let pre2 = self.layers[1].forward(&h1)?;
        let mut h2d = relu(&pre2);
        let mask = match dropout {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let m: Vec<f64> = (0..h2d.len()).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                for (v, &k) in h2d.data_mut().iter_mut().zip(&m) {
                    *v *= k;
                }
                Some(m)
            }
            _ => None,
        };
        let logits = self.layers[2].forward(&h2d)?;
        Ok(Pass { x, pre1, h1, pre2, h2d, mask, logits })
    }

    fn backward(&self, pass: &Pass, labels: &[u8]) -> Result<(f64, Vec<Tensor>)> {
        let n = labels.len() as f64;
        let mut loss = 0.0;
        let mut g = Vec::with_capacity(labels.len());
        for (&z, &y) in pass.logits.data().iter().zip(labels) {
            loss += math::softplus(z) - y as f64 * z;
            g.push((math::sigmoid(z) - y as f64) / n);
        }
        let g3 = self.layers[2].backward(&pass.h2d, &Tensor::from_vec(&[labels.len(), 1], g)?)?;
        let mut dh2 = g3.input;
        if let Some(mask) = &pass.mask {
            for (v, &k) in dh2.data_mut().iter_mut().zip(mask) {
                *v *= k;
            }
        }
        let g2 = self.layers[1].backward(&pass.h1, &relu_backward(&pass.pre2, &dh2)?)?;
        let g1 = self.layers[0].backward(&pass.x, &relu_backward(&pass.pre1, &g2.input)?)?;
        Ok((loss / n, vec![g1.weight, g1.bias, g2.weight, g2.bias, g3.weight, g3.bias]))
    }

    fn batch(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            data.extend(self.standardizer.apply(r)?);
        }
        Tensor::from_vec(&[rows.len(), d], data)
    }

    /// Mean binary cross-entropy and parameter gradients with dropout off
    /// (order of [`MlpDetector::parameters`]). Inputs are raw vectors; the
    /// standardizer is applied first.
    pub fn loss_and_gradients(&self, rows: &[Vec<f64>], labels: &[u8]) -> Result<(f64, Vec<Tensor>)> {
        let pass = self.forward(self.batch(rows)?, None)?;
        self.backward(&pass, labels)
    }

    /// Probability that `v` is OOD, dropout off.
    pub fn score(&self, v: &[f64]) -> Result<f64> {
        let z = self.standardizer.apply(v)?;
        let x = Tensor::from_vec(&[1, z.len()], z)?;
        let pass = self.forward(x, None)?;
        Ok(math::sigmoid(pass.logits.data()[0]))
    }

    /// Smallest |pre-ReLU value| on `rows`; finite differences need it
    /// well above the step size.
    pub fn min_relu_margin(&self, rows: &[Vec<f64>]) -> Result<f64> {
        let pass = self.forward(self.batch(rows)?, None)?;
        Ok(pass.pre1.data().iter().chain(pass.pre2.data()).map(|v| v.abs()).fold(f64::INFINITY, f64::min))
    }
}

/// Minibatch SGD with momentum on the mean binary cross-entropy.
pub fn train_mlp<R: AsRef<[f64]>>(rows: &[R], labels: &[u8], config: &MlpConfig) -> Result<(MlpDetector, MlpFitReport)> {
    check_training_set(rows, labels)?;
    if config.batch_size == 0 {
        return Err(Error::invalid("MLP batch size must be >= 1"));
    }
    let standardizer = Standardizer::fit(rows)?;
    let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.as_ref().to_vec()).collect();
    let mut mlp = MlpDetector::init(standardizer, config.clone())?;
    let mut sgd = Sgd::new(config.lr, config.momentum, 0.0);
    let mut rng = substream(config.seed, "mlp-train");
    let mut order: Vec<usize> = (0..raw.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| raw[i].clone()).collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let pass = mlp.forward(mlp.batch(&xs)?, Some(&mut rng))?;
            let (loss, grads) = mlp.backward(&pass, &ys)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            sgd.step(&mut mlp.parameters_mut(), &grads);
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / raw.len() as f64);
    }
    Ok((mlp, MlpFitReport { epoch_losses }))
}
