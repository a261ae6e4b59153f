//! The training loop.
//!
//! Each iteration:
//!
//! 1. draw a labeled batch of `B` and an unlabeled batch of `mu * B`;
//! 2. weak views for both, a strong view for the unlabeled batch;
//! 3. weak predictions on the unlabeled batch update the transition ledger;
//! 4. each unlabeled sample gets a pseudo-label according to the method
//!    (for SoC: k from confidence, cluster, pick, select);
//! 5. supervised + weighted consistency loss, one momentum-SGD step.
//!
//! All randomness comes from one seeded stream, and the augmentation draws
//! are the same regardless of method, so two methods that produce identical
//! targets follow identical trajectories.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{pick_candidates, ClusterCache};
use crate::error::{Result, SocError};
use crate::kselect::KPolicy;
use crate::label::{
    build_indicator, entropy, select_label, CandidateSet, ProbVector, SelectedLabel,
    SelectionIndicator,
};
use crate::losses::{
    baseline_fixmatch_terms, consistency_terms, cross_entropy, cross_entropy_grad,
    supervised_loss_from_logits, Classifier, LossReport,
};
use crate::numeric::compensated_sum;
use crate::sim::augment::{augment, Strength};
use crate::sim::config::{Method, SimConfig};
use crate::sim::dataset::Dataset;
use crate::sim::metrics::{MetricsRecord, SampleObjective};
use crate::sim::model::{cosine_lr, SgdMomentum, SoftmaxModel};
use crate::transition::{LedgerSnapshot, PredictionBank, SimilarityMatrix, TransitionLedger};

/// Epoch-shuffled index stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next_batch(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..n)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct SimState {
    pub model: SoftmaxModel,
    pub optimizer: SgdMomentum,
    pub ledger: TransitionLedger,
    pub bank: PredictionBank<usize>,
    pub iteration: usize,
    pub history: Vec<MetricsRecord>,
    rng: ChaCha8Rng,
    labeled_sampler: Sampler,
    unlabeled_sampler: Sampler,
}

#[derive(Serialize, Deserialize)]
struct SimStateDump {
    model: SoftmaxModel,
    optimizer: SgdMomentum,
    ledger: LedgerSnapshot,
    bank: PredictionBank<usize>,
    iteration: usize,
    history: Vec<MetricsRecord>,
    rng: ChaCha8Rng,
    labeled_sampler: Sampler,
    unlabeled_sampler: Sampler,
}

impl SimState {
    fn new(config: &SimConfig, dataset: &Dataset) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = SoftmaxModel::new(
            dataset.num_classes(),
            dataset.dim(),
            config.hidden,
            &mut rng,
        );
        let optimizer =
            SgdMomentum::new(model.params().len(), config.momentum, config.weight_decay);
        let mut bank = PredictionBank::new();
        for i in 0..dataset.unlabeled.len() {
            bank.register(i);
        }
        Ok(Self {
            model,
            optimizer,
            ledger: TransitionLedger::new(dataset.num_classes(), config.window)?,
            bank,
            iteration: 0,
            history: Vec::new(),
            rng,
            labeled_sampler: Sampler::new(dataset.labeled.len()),
            unlabeled_sampler: Sampler::new(dataset.unlabeled.len()),
        })
    }

    /// Checkpoint as JSON.
    pub fn to_json(&self) -> Result<String> {
        let dump = SimStateDump {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            ledger: self.ledger.snapshot(),
            bank: self.bank.clone(),
            iteration: self.iteration,
            history: self.history.clone(),
            rng: self.rng.clone(),
            labeled_sampler: self.labeled_sampler.clone(),
            unlabeled_sampler: self.unlabeled_sampler.clone(),
        };
        Ok(serde_json::to_string(&dump)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: SimStateDump = serde_json::from_str(s)?;
        Ok(Self {
            model: d.model,
            optimizer: d.optimizer,
            ledger: TransitionLedger::from_snapshot(d.ledger)?,
            bank: d.bank,
            iteration: d.iteration,
            history: d.history,
            rng: d.rng,
            labeled_sampler: d.labeled_sampler,
            unlabeled_sampler: d.unlabeled_sampler,
        })
    }
}

/// Output of [`Trainer::run`].
#[derive(Debug, Clone)]
pub struct RunResult {
    pub history: Vec<MetricsRecord>,
    /// Total loss per iteration.
    pub losses: Vec<f64>,
    /// Mean test accuracy over the last `eval_tail` evaluations.
    pub final_top1: f64,
    pub state: SimState,
}

pub struct Trainer<'a> {
    config: SimConfig,
    policy: KPolicy,
    dataset: &'a Dataset,
    state: SimState,
    cache: ClusterCache,
    sim: Option<SimilarityMatrix>,
    warmup_iters: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: SimConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let state = SimState::new(&config, dataset)?;
        Self::resume(config, dataset, state)
    }

    /// Continues from a checkpoint. The clustering snapshot is rebuilt from
    /// the restored ledger on the next step.
    pub fn resume(config: SimConfig, dataset: &'a Dataset, state: SimState) -> Result<Self> {
        config.validate()?;
        if dataset.num_classes() != config.dataset.num_classes() {
            return Err(SocError::Config {
                path: "dataset".into(),
                message: "dataset does not match the configured class count".into(),
            });
        }
        let policy = config.policy()?;
        let per_epoch = dataset.unlabeled.len().div_ceil(config.unlabeled_batch());
        Ok(Self {
            cache: ClusterCache::new(config.seed, config.kmedoids_max_iter),
            warmup_iters: config.warmup_epochs * per_epoch,
            policy,
            dataset,
            state,
            sim: None,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn into_state(self) -> SimState {
        self.state
    }

    pub fn warmup_iters(&self) -> usize {
        self.warmup_iters
    }

    fn refresh_similarity(&mut self, force: bool) {
        let due = self
            .state
            .iteration
            .is_multiple_of(self.config.cluster_refresh);
        if self.sim.is_none() || due || force {
            let sim = self.state.ledger.similarity_matrix();
            self.cache.refresh(&sim);
            self.sim = Some(sim);
        }
    }

    /// Pseudo-label for one weak prediction under the run's method, plus the
    /// `k` it was clustered with (K for hard labels, 1 for unselected soft
    /// labels).
    fn select(&mut self, p: &ProbVector) -> Result<(SelectedLabel, usize)> {
        let num_classes = p.num_classes();
        match self.config.method {
            Method::Soc => {
                let k = self.policy.select_k(p.confidence())?;
                let sim = self
                    .sim
                    .as_ref()
                    .expect("similarity refreshed before selection");
                let clusters = self.cache.get(sim, k)?;
                let candidates = pick_candidates(clusters, p.argmax())?;
                let g = build_indicator(&candidates, num_classes)?;
                Ok((select_label(p, &g)?, k))
            }
            Method::Fixmatch { .. } => {
                let g = build_indicator(&CandidateSet::new([p.argmax()]), num_classes)?;
                Ok((select_label(p, &g)?, num_classes))
            }
            Method::PlainSoft { .. } | Method::Supervised => {
                Ok((select_label(p, &SelectionIndicator::all(num_classes))?, 1))
            }
        }
    }

    /// One training iteration.
    pub fn step(&mut self) -> Result<LossReport> {
        let cfg = &self.config;
        let (b, ub) = (cfg.batch_size, cfg.unlabeled_batch());
        let lr = cosine_lr(cfg.lr, self.state.iteration, cfg.iters);
        let aug = cfg.augment;
        let lambda = cfg.lambda_cos;
        let method = cfg.method;
        let ds = self.dataset;

        let st = &mut self.state;
        let lb_idx = st.labeled_sampler.next_batch(b, &mut st.rng);
        let ulb_idx = st.unlabeled_sampler.next_batch(ub, &mut st.rng);
        let lb_x: Vec<Vec<f64>> = lb_idx
            .iter()
            .map(|&i| augment(&ds.labeled[i].features, Strength::Weak, &aug, &mut st.rng))
            .collect();
        let lb_y: Vec<usize> = lb_idx.iter().map(|&i| ds.labeled[i].label).collect();
        let mut ulb_weak = Vec::with_capacity(ub);
        let mut ulb_strong = Vec::with_capacity(ub);
        for &i in &ulb_idx {
            let x = &ds.unlabeled[i].features;
            ulb_weak.push(augment(x, Strength::Weak, &aug, &mut st.rng));
            ulb_strong.push(augment(x, Strength::Strong, &aug, &mut st.rng));
        }

        let num_params = st.model.params().len();
        let mut grad = vec![0.0; num_params];

        let lb_fwd: Vec<_> = lb_x.iter().map(|x| st.model.forward(x)).collect();
        let lb_logits: Vec<Vec<f64>> = lb_fwd.iter().map(|(z, _)| z.clone()).collect();
        let sup = supervised_loss_from_logits(&lb_logits, &lb_y)?;
        if !sup.is_finite() {
            return Err(SocError::DivergedAtIteration(st.iteration));
        }
        for ((x, (z, act)), &y) in lb_x.iter().zip(&lb_fwd).zip(&lb_y) {
            let mut target = vec![0.0; z.len()];
            target[y] = 1.0;
            let d: Vec<f64> = cross_entropy_grad(&target, z)
                .into_iter()
                .map(|g| g / b as f64)
                .collect();
            st.model.backward(x, act.as_deref(), &d, &mut grad);
        }

        let mut probs = Vec::with_capacity(ub);
        for x in &ulb_weak {
            let z = st.model.logits(x);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(SocError::DivergedAtIteration(st.iteration));
            }
            probs.push(ProbVector::from_logits(&z)?);
        }
        let observed: Vec<(usize, usize)> = ulb_idx
            .iter()
            .zip(&probs)
            .map(|(&i, p)| (i, p.argmax()))
            .collect();
        st.ledger.observe_batch(&mut st.bank, &observed)?;

        let consistency_on = st.iteration >= self.warmup_iters && method != Method::Supervised;
        let mut cos = 0.0;
        let mut per_sample = Vec::new();
        if consistency_on {
            let strong_fwd: Vec<_> = ulb_strong
                .iter()
                .map(|x| self.state.model.forward(x))
                .collect();
            let strong_logits: Vec<Vec<f64>> = strong_fwd.iter().map(|(z, _)| z.clone()).collect();

            // (target, weight) per unlabeled sample
            let (targets, weights): (Vec<Vec<f64>>, Vec<f64>) = match method {
                Method::Soc => {
                    self.refresh_similarity(false);
                    let selected = probs
                        .iter()
                        .map(|p| self.select(p).map(|(s, _)| s))
                        .collect::<Result<Vec<_>>>()?;
                    per_sample = consistency_terms(&selected, &strong_logits)?;
                    selected
                        .into_iter()
                        .map(|s| (s.probs.into_inner(), 1.0))
                        .unzip()
                }
                Method::Fixmatch { tau } => {
                    per_sample = baseline_fixmatch_terms(&probs, &strong_logits, tau)?;
                    probs
                        .iter()
                        .map(|p| {
                            let mut t = vec![0.0; p.num_classes()];
                            t[p.argmax()] = 1.0;
                            (t, if p.confidence() >= tau { 1.0 } else { 0.0 })
                        })
                        .unzip()
                }
                Method::PlainSoft { tau } => {
                    let pairs: Vec<(Vec<f64>, f64)> = probs
                        .iter()
                        .map(|p| {
                            (
                                p.as_slice().to_vec(),
                                if p.confidence() >= tau { 1.0 } else { 0.0 },
                            )
                        })
                        .collect();
                    per_sample = pairs
                        .iter()
                        .zip(&strong_logits)
                        .map(|((t, w), z)| Ok(if *w > 0.0 { cross_entropy(t, z)? } else { 0.0 }))
                        .collect::<Result<_>>()?;
                    pairs.into_iter().unzip()
                }
                Method::Supervised => unreachable!("consistency disabled for supervised runs"),
            };
            cos = compensated_sum(per_sample.iter().copied()) / ub as f64;

            if lambda != 0.0 {
                let scale = lambda / ub as f64;
                let st = &mut self.state;
                for (((x, (z, act)), t), w) in ulb_strong
                    .iter()
                    .zip(&strong_fwd)
                    .zip(&targets)
                    .zip(&weights)
                {
                    if *w == 0.0 {
                        continue;
                    }
                    let d: Vec<f64> = cross_entropy_grad(t, z)
                        .into_iter()
                        .map(|g| g * scale * w)
                        .collect();
                    st.model.backward(x, act.as_deref(), &d, &mut grad);
                }
            }
        }

        let report = LossReport::new(sup, cos, lambda, per_sample);
        let st = &mut self.state;
        if !report.is_finite() {
            return Err(SocError::DivergedAtIteration(st.iteration));
        }
        st.optimizer.step(st.model.params_mut(), &grad, lr);
        st.iteration += 1;
        Ok(report)
    }

    /// Evaluates on the test set and, without augmentation, on the unlabeled
    /// set using the current ledger for selection.
    pub fn evaluate(&mut self) -> Result<MetricsRecord> {
        let ds = self.dataset;
        let correct = ds
            .test
            .iter()
            .filter(|e| crate::numeric::argmax(&self.state.model.logits(&e.features)) == e.label)
            .count();
        let test_top1 = correct as f64 / ds.test.len() as f64;

        let rows = self.sample_objectives_with_k()?;
        let n = rows.len() as f64;
        let mean =
            |f: &dyn Fn(&(SampleObjective, usize)) -> f64| compensated_sum(rows.iter().map(f)) / n;
        Ok(MetricsRecord {
            iter: self.state.iteration,
            test_top1,
            pl_acc: mean(&|(r, _)| (r.pred == r.label) as u8 as f64),
            mean_entropy_sel: mean(&|(r, _)| r.entropy_sel),
            mean_entropy_raw: mean(&|(r, _)| r.entropy_raw),
            mean_zobj1: mean(&|(r, _)| r.z_obj1),
            mean_zobj2: mean(&|(r, _)| r.z_obj2 as f64),
            k_mean: mean(&|(_, k)| *k as f64),
            max_zobj2: rows.iter().map(|(r, _)| r.z_obj2).max().unwrap_or(0),
        })
    }

    fn sample_objectives_with_k(&mut self) -> Result<Vec<(SampleObjective, usize)>> {
        if self.config.method == Method::Soc {
            self.refresh_similarity(false);
        }
        let ds = self.dataset;
        let mut out = Vec::with_capacity(ds.unlabeled.len());
        for (index, e) in ds.unlabeled.iter().enumerate() {
            let p = ProbVector::from_logits(&self.state.model.logits(&e.features))?;
            let (sel, k) = self.select(&p)?;
            out.push((
                SampleObjective {
                    index,
                    label: e.label,
                    pred: p.argmax(),
                    z_obj1: crate::label::obj1_score(&p, &sel.indicator, e.label)?,
                    entropy_raw: entropy(&p),
                    entropy_sel: entropy(&sel.probs),
                    z_obj2: sel.indicator.count(),
                },
                k,
            ));
        }
        Ok(out)
    }

    /// Per-sample `(z_obj1, entropy)` data on the unlabeled set.
    pub fn sample_objectives(&mut self) -> Result<Vec<SampleObjective>> {
        Ok(self
            .sample_objectives_with_k()?
            .into_iter()
            .map(|(r, _)| r)
            .collect())
    }

    /// Mean entropy of cluster-selected labels over the unlabeled set when
    /// clustering the current (frozen) ledger with `policy` instead of the
    /// run's own policy.
    pub fn mean_selected_entropy(&mut self, policy: &KPolicy) -> Result<f64> {
        let sim = self.state.ledger.similarity_matrix();
        let mut cache = ClusterCache::new(self.config.seed, self.config.kmedoids_max_iter);
        cache.refresh(&sim);
        let ds = self.dataset;
        let mut values = Vec::with_capacity(ds.unlabeled.len());
        for e in &ds.unlabeled {
            let p = ProbVector::from_logits(&self.state.model.logits(&e.features))?;
            let k = policy.select_k(p.confidence())?;
            let candidates = pick_candidates(cache.get(&sim, k)?, p.argmax())?;
            let g = build_indicator(&candidates, p.num_classes())?;
            values.push(entropy(&select_label(&p, &g)?.probs));
        }
        Ok(compensated_sum(values) / ds.unlabeled.len() as f64)
    }

    /// Trains for the configured number of iterations, evaluating every
    /// `eval_every` iterations and at the end.
    pub fn run(mut self) -> Result<RunResult> {
        let mut losses = Vec::with_capacity(self.config.iters.saturating_sub(self.state.iteration));
        while self.state.iteration < self.config.iters {
            let report = self.step()?;
            losses.push(report.total);
            let it = self.state.iteration;
            if it.is_multiple_of(self.config.eval_every) || it == self.config.iters {
                let rec = self.evaluate()?;
                self.state.history.push(rec);
            }
        }
        let tail = self.config.eval_tail.min(self.state.history.len()).max(1);
        let final_top1 = if self.state.history.is_empty() {
            self.evaluate()?.test_top1
        } else {
            let h = &self.state.history;
            h[h.len() - tail..].iter().map(|r| r.test_top1).sum::<f64>() / tail as f64
        };
        Ok(RunResult {
            history: self.state.history.clone(),
            losses,
            final_top1,
            state: self.state,
        })
    }
}

/// Convenience wrapper: train a fresh model on `dataset` under `config`.
pub fn run(config: &SimConfig, dataset: &Dataset) -> Result<RunResult> {
    Trainer::new(config.clone(), dataset)?.run()
}
