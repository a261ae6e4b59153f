//! Supervised, consistency, total and hard-threshold baseline losses.
//!
//! All losses take raw logits for the prediction side and apply a
//! log-sum-exp-stabilized log-softmax internally. Batch means use compensated
//! summation so reduction order does not move results beyond 1e-9.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SocError};
use crate::label::{ProbVector, SelectedLabel};
use crate::numeric::{compensated_sum, log_softmax, softmax};

/// Anything that maps a feature vector to class logits.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn logits(&self, x: &[f64]) -> Vec<f64>;
}

/// Breakdown of one iteration's objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sup: f64,
    pub cos: f64,
    pub total: f64,
    pub lambda_cos: f64,
    pub per_sample_cos: Vec<f64>,
}

impl LossReport {
    pub fn new(sup: f64, cos: f64, lambda_cos: f64, per_sample_cos: Vec<f64>) -> Self {
        Self {
            sup,
            cos,
            total: total_loss(sup, cos, lambda_cos),
            lambda_cos,
            per_sample_cos,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.sup.is_finite() && self.cos.is_finite() && self.total.is_finite()
    }
}

/// `-sum_c target[c] * log softmax(logits)[c]`.
pub fn cross_entropy(target: &[f64], logits: &[f64]) -> Result<f64> {
    if target.len() != logits.len() {
        return Err(SocError::ShapeMismatch {
            expected: target.len(),
            found: logits.len(),
        });
    }
    let ls = log_softmax(logits);
    let terms = target
        .iter()
        .zip(&ls)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &l)| -t * l);
    // rounding can push a saturated term a hair below zero
    Ok(compensated_sum(terms).max(0.0))
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `softmax(logits) - target` (for targets summing to one).
pub fn cross_entropy_grad(target: &[f64], logits: &[f64]) -> Vec<f64> {
    softmax(logits)
        .into_iter()
        .zip(target)
        .map(|(s, &t)| s - t)
        .collect()
}

fn one_hot(num_classes: usize, class: usize) -> Result<Vec<f64>> {
    if class >= num_classes {
        return Err(SocError::InvalidClass { class, num_classes });
    }
    let mut v = vec![0.0; num_classes];
    v[class] = 1.0;
    Ok(v)
}

/// Mean hard-label cross-entropy over precomputed logits.
pub fn supervised_loss_from_logits(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() {
        return Err(SocError::EmptyBatch);
    }
    if logits.len() != labels.len() {
        return Err(SocError::ShapeMismatch {
            expected: logits.len(),
            found: labels.len(),
        });
    }
    let terms = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| cross_entropy(&one_hot(z.len(), y)?, z))
        .collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(terms) / logits.len() as f64)
}

/// Mean cross-entropy of one-hot labels against the model's predictions on
/// (already augmented) labeled inputs.
pub fn supervised_loss<M: Classifier + ?Sized>(
    inputs: &[Vec<f64>],
    labels: &[usize],
    model: &M,
) -> Result<f64> {
    let logits: Vec<Vec<f64>> = inputs.iter().map(|x| model.logits(x)).collect();
    supervised_loss_from_logits(&logits, labels)
}

/// Per-sample consistency terms `H(p~_i, strong_logits_i)`.
pub fn consistency_terms(
    selected: &[SelectedLabel],
    strong_logits: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if selected.len() != strong_logits.len() {
        return Err(SocError::ShapeMismatch {
            expected: selected.len(),
            found: strong_logits.len(),
        });
    }
    selected
        .iter()
        .zip(strong_logits)
        .map(|(s, z)| cross_entropy(s.probs.as_slice(), z))
        .collect()
}

/// Mean over the batch of the selected soft label's cross-entropy against the
/// strong-view logits. Every sample contributes; there is no threshold.
pub fn consistency_loss(selected: &[SelectedLabel], strong_logits: &[Vec<f64>]) -> Result<f64> {
    let terms = consistency_terms(selected, strong_logits)?;
    if terms.is_empty() {
        return Err(SocError::EmptyBatch);
    }
    Ok(compensated_sum(terms.iter().copied()) / terms.len() as f64)
}

/// Per-sample terms of the hard-threshold baseline: the one-hot argmax
/// cross-entropy when `max(p) >= tau`, else zero.
pub fn baseline_fixmatch_terms(
    probs_weak: &[ProbVector],
    strong_logits: &[Vec<f64>],
    tau: f64,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(SocError::InvalidThreshold(tau));
    }
    if probs_weak.len() != strong_logits.len() {
        return Err(SocError::ShapeMismatch {
            expected: probs_weak.len(),
            found: strong_logits.len(),
        });
    }
    probs_weak
        .iter()
        .zip(strong_logits)
        .map(|(p, z)| {
            if p.confidence() >= tau {
                cross_entropy(&one_hot(p.num_classes(), p.argmax())?, z)
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

/// Hard pseudo-label loss averaged over the whole unlabeled batch; samples
/// below the confidence threshold contribute zero.
pub fn baseline_fixmatch_loss(
    probs_weak: &[ProbVector],
    strong_logits: &[Vec<f64>],
    tau: f64,
) -> Result<f64> {
    let terms = baseline_fixmatch_terms(probs_weak, strong_logits, tau)?;
    if terms.is_empty() {
        return Err(SocError::EmptyBatch);
    }
    Ok(compensated_sum(terms.iter().copied()) / terms.len() as f64)
}

pub fn total_loss(sup: f64, cos: f64, lambda_cos: f64) -> f64 {
    sup + lambda_cos * cos
}
