//! Softmax classifier with an optional ReLU hidden layer, plus SGD with
//! momentum and a cosine learning-rate schedule.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::losses::Classifier;

/// All parameters live in one flat vector:
/// linear: `[W (K x D), b (K)]`;
/// hidden: `[W1 (H x D), b1 (H), W2 (K x H), b2 (K)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    num_classes: usize,
    dim: usize,
    hidden: Option<usize>,
    params: Vec<f64>,
}

impl SoftmaxModel {
    /// Linear layers start at zero; a hidden layer gets He-scaled Gaussian
    /// weights from `rng`.
    pub fn new<R: Rng + ?Sized>(
        num_classes: usize,
        dim: usize,
        hidden: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let len = Self::param_len(num_classes, dim, hidden);
        let mut params = vec![0.0; len];
        if let Some(h) = hidden {
            let scale = (2.0 / dim as f64).sqrt();
            for w in &mut params[..h * dim] {
                *w = scale * rng.sample::<f64, _>(StandardNormal);
            }
            let scale = (1.0 / h as f64).sqrt();
            let w2 = h * dim + h;
            for w in &mut params[w2..w2 + num_classes * h] {
                *w = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Self {
            num_classes,
            dim,
            hidden,
            params,
        }
    }

    fn param_len(k: usize, d: usize, hidden: Option<usize>) -> usize {
        match hidden {
            None => k * d + k,
            Some(h) => h * d + h + k * h + k,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let d = x.len();
        b.iter()
            .enumerate()
            .map(|(r, &bias)| {
                bias + w[r * d..(r + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(a, v)| a * v)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Logits plus the hidden activations needed by [`backward`](Self::backward).
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        let (k, d) = (self.num_classes, self.dim);
        match self.hidden {
            None => (
                Self::affine(&self.params[..k * d], &self.params[k * d..], x),
                None,
            ),
            Some(h) => {
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(k * h);
                let act: Vec<f64> = Self::affine(w1, b1, x)
                    .into_iter()
                    .map(|v| v.max(0.0))
                    .collect();
                (Self::affine(w2, b2, &act), Some(act))
            }
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d logits`.
    pub fn backward(&self, x: &[f64], hidden: Option<&[f64]>, dlogits: &[f64], grad: &mut [f64]) {
        let (k, d) = (self.num_classes, self.dim);
        match self.hidden {
            None => {
                let (gw, gb) = grad.split_at_mut(k * d);
                for (r, &g) in dlogits.iter().enumerate() {
                    gb[r] += g;
                    for (gw, &v) in gw[r * d..(r + 1) * d].iter_mut().zip(x) {
                        *gw += g * v;
                    }
                }
            }
            Some(h) => {
                let act = hidden.expect("hidden activations required");
                let w2 = &self.params[h * d + h..h * d + h + k * h];
                let (gw1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(k * h);
                let mut dact = vec![0.0; h];
                for (r, &g) in dlogits.iter().enumerate() {
                    gb2[r] += g;
                    for j in 0..h {
                        gw2[r * h + j] += g * act[j];
                        dact[j] += g * w2[r * h + j];
                    }
                }
                for j in 0..h {
                    if act[j] <= 0.0 {
                        continue;
                    }
                    gb1[j] += dact[j];
                    for (gw, &v) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *gw += dact[j] * v;
                    }
                }
            }
        }
    }
}

impl Classifier for SoftmaxModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).0
    }
}

/// Plain (non-Nesterov) momentum SGD with L2 weight decay on all parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(num_params: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            let g = g + self.weight_decay * *p;
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
    }
}

/// Half-cosine decay from `base` at step 0 to zero at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step as f64 / total as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}
