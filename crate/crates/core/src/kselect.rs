//! Confidence-aware choice of the cluster count.
//!
//! Confident predictions get finer clusters (larger `k`, smaller candidate
//! sets); uncertain ones get coarser clusters.
//!
//! ```text
//! linear:       k = ceil((conf / alpha + 2/K) * K - 1/2),        alpha >= K / (K - 2)
//! exponential:  k = ceil((exp(beta * conf) - 1 + 2/K) * K - 1/2), beta <= ln(2 - 2/K)
//! ```
//!
//! Results are clamped to `[2, K]`. At the linear boundary `alpha = K/(K-2)`
//! the low-confidence end yields 3 rather than 2.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SocError};

/// Mapping family from confidence to `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum KVariant {
    Linear {
        alpha: f64,
    },
    #[serde(alias = "exp")]
    Exponential {
        beta: f64,
    },
    Fixed {
        k: usize,
    },
}

/// A validated [`KVariant`] bound to a class count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KPolicy {
    variant: KVariant,
    num_classes: usize,
}

impl KPolicy {
    pub fn new(variant: KVariant, num_classes: usize) -> Result<Self> {
        let k = num_classes as f64;
        match variant {
            KVariant::Linear { alpha } => {
                if num_classes < 3 {
                    return Err(SocError::InvalidPolicy(
                        "linear policy needs at least 3 classes".into(),
                    ));
                }
                let min_alpha = k / (k - 2.0);
                if !(alpha >= min_alpha) || !alpha.is_finite() {
                    return Err(SocError::InvalidPolicy(format!(
                        "alpha {alpha} must be >= K/(K-2) = {min_alpha}"
                    )));
                }
            }
            KVariant::Exponential { beta } => {
                if num_classes < 2 {
                    return Err(SocError::InvalidPolicy("need at least 2 classes".into()));
                }
                let max_beta = max_beta(num_classes);
                if !(beta <= max_beta) || !beta.is_finite() {
                    return Err(SocError::InvalidPolicy(format!(
                        "beta {beta} must be <= ln(2 - 2/K) = {max_beta}"
                    )));
                }
            }
            KVariant::Fixed { k } => {
                if k < 2 || k > num_classes {
                    return Err(SocError::InvalidK { k, num_classes });
                }
            }
        }
        Ok(Self {
            variant,
            num_classes,
        })
    }

    pub fn linear(alpha: f64, num_classes: usize) -> Result<Self> {
        Self::new(KVariant::Linear { alpha }, num_classes)
    }

    pub fn exponential(beta: f64, num_classes: usize) -> Result<Self> {
        Self::new(KVariant::Exponential { beta }, num_classes)
    }

    pub fn fixed(k: usize, num_classes: usize) -> Result<Self> {
        Self::new(KVariant::Fixed { k }, num_classes)
    }

    pub fn variant(&self) -> KVariant {
        self.variant
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Cluster count for a prediction with the given max-probability.
    pub fn select_k(&self, confidence: f64) -> Result<usize> {
        select_k(self, confidence)
    }
}

/// Smallest admissible linear `alpha` for `num_classes`.
pub fn min_alpha(num_classes: usize) -> f64 {
    let k = num_classes as f64;
    k / (k - 2.0)
}

/// Largest admissible exponential `beta` for `num_classes`.
pub fn max_beta(num_classes: usize) -> f64 {
    (2.0 - 2.0 / num_classes as f64).ln()
}

pub fn select_k(policy: &KPolicy, confidence: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(SocError::InvalidConfidence(confidence));
    }
    let k = policy.num_classes as f64;
    let raw = match policy.variant {
        KVariant::Fixed { k } => return Ok(k),
        KVariant::Linear { alpha } => ((confidence / alpha + 2.0 / k) * k - 0.5).ceil(),
        KVariant::Exponential { beta } => {
            (((beta * confidence).exp() - 1.0 + 2.0 / k) * k - 0.5).ceil()
        }
    };
    Ok((raw.max(2.0) as usize).min(policy.num_classes))
}
