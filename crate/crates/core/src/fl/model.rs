//! Multinomial logistic regression, local SGD and weighted aggregation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::Dataset;
use super::FlError;

/// Global parameters after `round` aggregations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub weights: Vec<f64>,
    pub round: usize,
}

impl GlobalModel {
    pub fn zeros(params: usize) -> Self {
        Self { weights: vec![0.0; params], round: 0 }
    }
}

/// Differentiable empirical loss over an indexed sample set.
pub trait Objective {
    fn num_params(&self) -> usize;
    fn num_samples(&self) -> usize;
    /// Mean loss over `batch`; overwrites `grad` with its gradient.
    fn loss_grad(&self, w: &[f64], batch: &[usize], grad: &mut [f64]) -> f64;
}

/// Softmax regression with a bias per class; weights are laid out as
/// `n_classes` rows of `dim + 1` values, the bias last.
#[derive(Debug, Clone, Copy)]
pub struct SoftmaxRegression<'a> {
    pub data: &'a Dataset,
    pub n_classes: usize,
}

impl<'a> SoftmaxRegression<'a> {
    pub fn new(data: &'a Dataset, n_classes: usize) -> Self {
        Self { data, n_classes }
    }

    pub fn param_count(dim: usize, n_classes: usize) -> usize {
        n_classes * (dim + 1)
    }

    fn logits(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let stride = self.data.dim + 1;
        for (c, z) in out.iter_mut().enumerate() {
            let row = &w[c * stride..(c + 1) * stride];
            *z = row[..self.data.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[self.data.dim];
        }
    }

    /// Mean cross-entropy and accuracy over the whole dataset.
    pub fn evaluate(&self, w: &[f64]) -> (f64, f64) {
        let mut z = vec![0.0; self.n_classes];
        let (mut loss, mut hits) = (0.0, 0usize);
        for i in 0..self.data.len() {
            self.logits(w, self.data.row(i), &mut z);
            let y = self.data.labels[i];
            loss += log_sum_exp(&z) - z[y];
            let best = z.iter().enumerate().fold(0, |b, (c, &v)| if v > z[b] { c } else { b });
            hits += usize::from(best == y);
        }
        let n = self.data.len().max(1) as f64;
        (loss / n, hits as f64 / n)
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Objective for SoftmaxRegression<'_> {
    fn num_params(&self) -> usize {
        Self::param_count(self.data.dim, self.n_classes)
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn loss_grad(&self, w: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let dim = self.data.dim;
        let stride = dim + 1;
        let mut z = vec![0.0; self.n_classes];
        let mut loss = 0.0;
        for &i in batch {
            let x = self.data.row(i);
            let y = self.data.labels[i];
            self.logits(w, x, &mut z);
            let lse = log_sum_exp(&z);
            loss += lse - z[y];
            for (c, &zc) in z.iter().enumerate() {
                let r = (zc - lse).exp() - if c == y { 1.0 } else { 0.0 };
                let g = &mut grad[c * stride..(c + 1) * stride];
                for (gj, xj) in g[..dim].iter_mut().zip(x) {
                    *gj += r * xj;
                }
                g[dim] += r;
            }
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        loss * scale
    }
}

/// `epochs` passes of shuffled mini-batch SGD starting from `w`.
pub fn local_update<O: Objective, R: Rng + ?Sized>(
    w: &[f64],
    objective: &O,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut R,
    client: usize,
) -> Result<Vec<f64>, FlError> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(FlError::Diverged { client });
    }
    let mut w = w.to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut order: Vec<usize> = (0..objective.num_samples()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for batch in order.chunks(batch_size.max(1)) {
            let loss = objective.loss_grad(&w, batch, &mut grad);
            if !loss.is_finite() {
                return Err(FlError::Diverged { client });
            }
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= lr * gi;
            }
        }
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(FlError::Diverged { client });
    }
    Ok(w)
}

/// Dataset-size weighted average of `updates`, followed by the server step
/// `w + η(w_avg − w)`.
pub fn global_aggregate(updates: &[(&[f64], usize)], current: &GlobalModel, global_lr: f64) -> Result<GlobalModel, FlError> {
    let mut mean: Option<Vec<f64>> = None;
    let mut total = 0usize;
    for &(w, n) in updates {
        if w.len() != current.weights.len() {
            return Err(FlError::InvalidConfig(format!(
                "update has {} parameters, model has {}",
                w.len(),
                current.weights.len()
            )));
        }
        if n == 0 {
            continue;
        }
        total += n;
        match mean.as_mut() {
            None => mean = Some(w.to_vec()),
            Some(m) => {
                let frac = n as f64 / total as f64;
                for (mi, wi) in m.iter_mut().zip(w) {
                    *mi += (wi - *mi) * frac;
                }
            }
        }
    }
    let mean = mean.ok_or(FlError::NoSamples)?;
    let weights = if global_lr == 1.0 {
        mean
    } else {
        current.weights.iter().zip(&mean).map(|(w, m)| w + global_lr * (m - w)).collect()
    };
    Ok(GlobalModel { weights, round: current.round + 1 })
}
