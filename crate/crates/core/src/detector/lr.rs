use alloc::vec;
use alloc::vec::Vec;

use super::{check_training_set, Standardizer};
use crate::{math, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LrConfig {
    /// Strength of the `l2/(2n)·‖w‖²` penalty (bias unpenalized).
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once `‖∇J‖₂ ≤ tol`.
    pub tol: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig { l2: 1.0, max_iter: 1000, tol: 1e-6 }
    }
}

/// Logistic regression over standardized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LrDetector {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrFitReport {
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at each accepted iterate, starting from the initial point.
    pub loss_history: Vec<f64>,
    pub grad_norm: f64,
}

/// Mean logistic loss plus `l2/(2n)·‖w‖²`, and its gradient `(∇w, ∂b)`.
///
/// This is the scikit-learn objective with `C = 1/l2`, divided by `n`.
pub fn lr_objective(rows: &[Vec<f64>], labels: &[u8], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let z = dot(w, x) + b;
        loss += math::softplus(z) - y as f64 * z;
        let r = math::sigmoid(z) - y as f64;
        gb += r;
        for (g, &xi) in gw.iter_mut().zip(x) {
            *g += r * xi;
        }
    }
    let reg = l2 / n;
    let mut wsq = 0.0;
    for (g, &wi) in gw.iter_mut().zip(w) {
        *g = *g / n + reg * wi;
        wsq += wi * wi;
    }
    (loss / n + 0.5 * reg * wsq, gw, gb / n)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits a standardizer on `rows`, then minimizes the L2-regularized logistic
/// loss by full-batch gradient descent. Each step starts from a
/// Barzilai–Borwein length and backtracks until the Armijo condition holds,
/// so the objective never increases.
pub fn train_lr<R: AsRef<[f64]>>(rows: &[R], labels: &[u8], config: &LrConfig) -> Result<(LrDetector, LrFitReport)> {
    check_training_set(rows, labels)?;
    if !(config.l2 >= 0.0) || !(config.tol > 0.0) {
        return Err(Error::invalid("LR needs l2 >= 0 and tol > 0"));
    }
    let standardizer = Standardizer::fit(rows)?;
    let x = standardizer.apply_all(rows)?;
    let d = standardizer.dim();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut f, mut gw, mut gb) = lr_objective(&x, labels, &w, b, config.l2);
    let mut history = vec![f];
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, f64, Vec<f64>, f64)> = None;
    let mut iterations = 0;
    let mut gnorm = grad_norm(&gw, gb);

    while iterations < config.max_iter && gnorm > config.tol {
        if let Some((pw, pb, pgw, pgb)) = &prev {
            let mut ss = (b - pb) * (b - pb);
            let mut sy = (b - pb) * (gb - pgb);
            for i in 0..d {
                let s = w[i] - pw[i];
                ss += s * s;
                sy += s * (gw[i] - pgw[i]);
            }
            if sy > 0.0 && ss > 0.0 {
                step = ss / sy;
            }
        }
        let g2 = gnorm * gnorm;
        let mut accepted = None;
        for _ in 0..60 {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let nb = b - step * gb;
            let (nf, ngw, ngb) = lr_objective(&x, labels, &nw, nb, config.l2);
            if nf <= f - 1e-4 * step * g2 {
                accepted = Some((nw, nb, nf, ngw, ngb));
                break;
            }
            step *= 0.5;
        }
        let Some((nw, nb, nf, ngw, ngb)) = accepted else { break };
        prev = Some((core::mem::replace(&mut w, nw), b, core::mem::replace(&mut gw, ngw), gb));
        b = nb;
        gb = ngb;
        f = nf;
        history.push(f);
        gnorm = grad_norm(&gw, gb);
        iterations += 1;
    }
    if !f.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic regression fit".into()));
    }
    let converged = gnorm <= config.tol;
    Ok((LrDetector { weights: w, bias: b, standardizer }, LrFitReport { iterations, converged, loss_history: history, grad_norm: gnorm }))
}

fn grad_norm(gw: &[f64], gb: f64) -> f64 {
    math::sqrt(gw.iter().map(|g| g * g).sum::<f64>() + gb * gb)
}

impl LrDetector {
    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    /// Decision value `w·standardize(v) + b`.
    pub fn decision(&self, v: &[f64]) -> Result<f64> {
        let z = self.standardizer.apply(v)?;
        Ok(dot(&self.weights, &z) + self.bias)
    }

    /// Probability that `v` is OOD.
    pub fn score(&self, v: &[f64]) -> Result<f64> {
        Ok(math::sigmoid(self.decision(v)?))
    }
}
