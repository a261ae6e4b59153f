use serde::{Deserialize, Serialize};

use crate::error::{Result, SocError};
use crate::kselect::{KPolicy, KVariant};
use crate::sim::augment::AugmentConfig;
use crate::sim::dataset::SyntheticDatasetSpec;

/// Which unlabeled-data objective the run trains with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Cluster-selected soft labels with the configured k policy.
    Soc,
    /// Hard argmax pseudo-labels kept when confidence reaches `tau`.
    Fixmatch { tau: f64 },
    /// Unselected soft labels (all-ones indicator) kept when confidence
    /// reaches `tau`.
    PlainSoft { tau: f64 },
    /// Labeled data only.
    Supervised,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Soc => "soc",
            Method::Fixmatch { .. } => "fixmatch",
            Method::PlainSoft { .. } => "plain_soft",
            Method::Supervised => "supervised",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Labeled batch size `B`.
    pub batch_size: usize,
    /// Unlabeled batch is `mu * B`.
    pub mu: usize,
    /// Transition window `N_b`, in batches.
    pub window: usize,
    pub lambda_cos: f64,
    pub k_policy: KVariant,
    pub method: Method,
    pub iters: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs over the unlabeled set trained on the supervised loss alone.
    pub warmup_epochs: usize,
    pub eval_every: usize,
    /// Number of trailing evaluations averaged into the final accuracy.
    pub eval_tail: usize,
    /// Iterations between similarity refreshes for clustering.
    pub cluster_refresh: usize,
    pub kmedoids_max_iter: usize,
    pub hidden: Option<usize>,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub dataset: SyntheticDatasetSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            mu: 5,
            window: 512,
            lambda_cos: 1.0,
            k_policy: KVariant::Linear { alpha: 5.0 },
            method: Method::Soc,
            iters: 5000,
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_epochs: 1,
            eval_every: 100,
            eval_tail: 3,
            cluster_refresh: 1,
            kmedoids_max_iter: 100,
            hidden: None,
            augment: AugmentConfig::default(),
            seed: 0,
            dataset: SyntheticDatasetSpec::default(),
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> SocError {
    SocError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl SimConfig {
    /// Parses JSON, reporting the offending field path on schema violations,
    /// then validates value ranges.
    pub fn from_json(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn unlabeled_batch(&self) -> usize {
        self.mu * self.batch_size
    }

    pub fn policy(&self) -> Result<KPolicy> {
        KPolicy::new(self.k_policy, self.dataset.num_classes())
            .map_err(|e| config_err("k_policy", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be at least 1"));
        }
        if self.mu == 0 {
            return Err(config_err("mu", "must be at least 1"));
        }
        if self.window == 0 {
            return Err(config_err("window", "must be at least 1"));
        }
        if !(self.lambda_cos >= 0.0) || !self.lambda_cos.is_finite() {
            return Err(config_err("lambda_cos", "must be finite and non-negative"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(config_err("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(config_err("weight_decay", "must be non-negative"));
        }
        if self.eval_every == 0 {
            return Err(config_err("eval_every", "must be at least 1"));
        }
        if self.eval_tail == 0 {
            return Err(config_err("eval_tail", "must be at least 1"));
        }
        if self.cluster_refresh == 0 {
            return Err(config_err("cluster_refresh", "must be at least 1"));
        }
        if self.hidden == Some(0) {
            return Err(config_err("hidden", "must be at least 1 when set"));
        }
        let aug = &self.augment;
        if !(aug.weak_sigma >= 0.0) || !(aug.strong_sigma >= 0.0) {
            return Err(config_err(
                "augment.weak_sigma",
                "noise levels must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&aug.strong_drop) {
            return Err(config_err("augment.strong_drop", "must be in [0, 1]"));
        }
        match self.method {
            Method::Fixmatch { tau } | Method::PlainSoft { tau } if !(0.0..=1.0).contains(&tau) => {
                return Err(config_err("method.tau", format!("{tau} is outside [0, 1]")));
            }
            _ => {}
        }
        self.policy()?;
        Ok(())
    }
}
