//! Feature-space perturbations standing in for image augmentations.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strength {
    Weak,
    Strong,
}

/// Weak views add isotropic noise `weak_sigma`; strong views add the larger
/// `strong_sigma` and zero each coordinate with probability `strong_drop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub strong_drop: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_sigma: 0.3,
            strong_sigma: 1.0,
            strong_drop: 0.1,
        }
    }
}

pub fn augment<R: Rng + ?Sized>(
    x: &[f64],
    strength: Strength,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Vec<f64> {
    match strength {
        Strength::Weak => x
            .iter()
            .map(|&v| {
                let n: f64 = rng.sample(StandardNormal);
                v + cfg.weak_sigma * n
            })
            .collect(),
        Strength::Strong => x
            .iter()
            .map(|&v| {
                let n: f64 = rng.sample(StandardNormal);
                let keep = rng.random::<f64>() >= cfg.strong_drop;
                if keep {
                    v + cfg.strong_sigma * n
                } else {
                    0.0
                }
            })
            .collect(),
    }
}
