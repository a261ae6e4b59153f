//! Randomized invariant suites behind `soc verify`.
//!
//! Every suite is deterministic in its seed and reports how many trials
//! passed, plus a few sample failures for diagnosis.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

use crate::cluster::{assign, kmedoids, within_similarity, ClusterSet, DEFAULT_MAX_ITER};
use crate::error::{Result, SocError};
use crate::kselect::{max_beta, min_alpha, KPolicy};
use crate::label::{
    build_indicator, entropy, select_label, CandidateSet, ProbVector, ENTROPY_SAFE_CANDIDATES,
};
use crate::losses::{cross_entropy, cross_entropy_grad};
use crate::transition::{BatchTransitions, SimilarityMatrix, TransitionLedger};

pub const SUITES: [&str; 7] = [
    "lemma1", "theorem1", "krange", "cluster", "ctt", "losses", "all",
];

const ENTROPY_SLACK: f64 = 1e-12;
const MAX_REPORTED_FAILURES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: 0,
            total: 0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else if self.failures.len() < MAX_REPORTED_FAILURES {
            self.failures.push(detail());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.ok() { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}/{}", self.name, self.passed, self.total)
    }
}

fn suite_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs a suite by name. `trials` overrides each suite's default size.
pub fn run_suite(name: &str, trials: Option<usize>, seed: u64) -> Result<Vec<SuiteReport>> {
    let t = |default: usize| trials.unwrap_or(default);
    Ok(match name {
        "lemma1" => vec![lemma1(t(10_000), seed), lemma1_uniform(t(1_000), seed)],
        "theorem1" => vec![theorem1(t(1_000), seed)],
        "krange" => vec![krange(t(1_000))],
        "cluster" => vec![cluster(t(500), seed), planted_blocks(t(20), seed)],
        "ctt" => vec![ctt(t(100), seed)],
        "losses" => vec![gradient(t(200), seed)],
        "all" => {
            let mut out = Vec::new();
            for s in &SUITES[..SUITES.len() - 1] {
                out.extend(run_suite(s, trials, seed)?);
            }
            out
        }
        other => return Err(SocError::UnknownSuite(other.to_string())),
    })
}

/// Dirichlet draw via normalized Gamma variates. Concentration is drawn
/// log-uniformly so both peaked and flat vectors show up.
pub fn random_prob_vector<R: Rng + ?Sized>(rng: &mut R, num_classes: usize) -> ProbVector {
    let alpha = 10f64.powf(rng.random_range(-1.0..1.0));
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let raw: Vec<f64> = (0..num_classes).map(|_| rng.sample(gamma)).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 && total.is_finite() {
            if let Ok(p) = ProbVector::new(raw.into_iter().map(|v| v / total).collect()) {
                return p;
            }
        }
    }
}

/// Random candidate set of `size` classes that includes `must`.
fn candidates_with<R: Rng + ?Sized>(
    rng: &mut R,
    num_classes: usize,
    size: usize,
    must: usize,
) -> CandidateSet {
    let others: Vec<usize> = sample(rng, num_classes - 1, size - 1)
        .into_iter()
        .map(|i| if i >= must { i + 1 } else { i })
        .collect();
    CandidateSet::new(others.into_iter().chain([must]))
}

fn selected_entropy(p: &ProbVector, c: &CandidateSet) -> Result<f64> {
    let g = build_indicator(c, p.num_classes())?;
    Ok(entropy(&select_label(p, &g)?.probs))
}

pub fn lemma1(trials: usize, seed: u64) -> SuiteReport {
    let mut rng = suite_rng(seed, 1);
    let mut report = SuiteReport::new("lemma1");
    for _ in 0..trials {
        let k = rng.random_range(3..=200);
        let p = random_prob_vector(&mut rng, k);
        let size = rng.random_range(1..=ENTROPY_SAFE_CANDIDATES.min(k));
        let c = candidates_with(&mut rng, k, size, p.argmax());
        let (before, after) = (entropy(&p), selected_entropy(&p, &c));
        report.record(
            matches!(after, Ok(a) if a <= before + ENTROPY_SLACK),
            || format!("K={k} |C|={size}: H(p)={before} H(p~)={after:?}"),
        );
    }
    report
}

/// A vector whose entries on a random candidate set all equal its maximum.
pub fn uniform_selected_vector<R: Rng + ?Sized>(
    rng: &mut R,
    num_classes: usize,
) -> (ProbVector, CandidateSet) {
    let size = rng.random_range(1..=num_classes);
    let classes = CandidateSet::new(sample(rng, num_classes, size));
    let lo = 1.0 / num_classes as f64;
    let hi = 1.0 / size as f64;
    let u = if size == num_classes {
        lo
    } else {
        rng.random_range(lo..=hi)
    };
    // spread the remaining mass over the others, each at most u
    let rest = num_classes - size;
    let remaining = (1.0 - size as f64 * u).max(0.0);
    let mut t: Vec<f64> = (0..rest).map(|_| rng.random::<f64>()).collect();
    let current: f64 = t.iter().sum::<f64>() * u;
    if rest > 0 {
        if current >= remaining {
            let scale = if current > 0.0 {
                remaining / current
            } else {
                0.0
            };
            t.iter_mut().for_each(|v| *v *= scale);
        } else {
            let slack: f64 = t.iter().map(|v| 1.0 - v).sum::<f64>() * u;
            let lambda = ((remaining - current) / slack).min(1.0);
            t.iter_mut().for_each(|v| *v += lambda * (1.0 - *v));
        }
    }
    let mut others = t.into_iter();
    let mut raw: Vec<f64> = (0..num_classes)
        .map(|c| {
            if classes.contains(c) {
                u
            } else {
                u * others.next().expect("one weight per unselected class")
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter_mut().for_each(|v| *v /= total);
    (
        ProbVector::new(raw).expect("normalized by construction"),
        classes,
    )
}

pub fn lemma1_uniform(trials: usize, seed: u64) -> SuiteReport {
    let mut rng = suite_rng(seed, 2);
    let mut report = SuiteReport::new("lemma1_uniform");
    for _ in 0..trials {
        let k = rng.random_range(2..=200);
        let (p, c) = uniform_selected_vector(&mut rng, k);
        let (before, after) = (entropy(&p), selected_entropy(&p, &c));
        report.record(
            matches!(after, Ok(a) if a <= before + ENTROPY_SLACK),
            || format!("K={k} |C|={}: H(p)={before} H(p~)={after:?}", c.len()),
        );
    }
    report
}

/// Nested chain `C1 ⊃ C2 ⊃ ...` of at least three sets, all containing the
/// argmax of `p`, starting from at most `ENTROPY_SAFE_CANDIDATES` classes.
pub fn random_chain<R: Rng + ?Sized>(rng: &mut R, p: &ProbVector) -> Vec<CandidateSet> {
    let k = p.num_classes();
    let top = rng.random_range(3..=ENTROPY_SAFE_CANDIDATES.min(k));
    let mut current: Vec<usize> = candidates_with(rng, k, top, p.argmax()).as_slice().to_vec();
    let mut chain = vec![CandidateSet::new(current.iter().copied())];
    while current.len() > 1 {
        let drop = rng.random_range(1..current.len());
        let removable: Vec<usize> = current
            .iter()
            .copied()
            .filter(|&c| c != p.argmax())
            .collect();
        let gone: Vec<usize> = sample(rng, removable.len(), drop.min(removable.len()))
            .into_iter()
            .map(|i| removable[i])
            .collect();
        current.retain(|c| !gone.contains(c));
        chain.push(CandidateSet::new(current.iter().copied()));
    }
    if chain.len() < 3 {
        // top >= 3 means a one-at-a-time shrink always gives length >= 3
        let a = p.argmax();
        let first = chain[0].clone();
        let second: Vec<usize> = first
            .iter()
            .filter(|&c| c != a)
            .skip(1)
            .chain([a])
            .collect();
        chain = vec![first, CandidateSet::new(second), CandidateSet::new([a])];
    }
    chain
}

pub fn theorem1(trials: usize, seed: u64) -> SuiteReport {
    let mut rng = suite_rng(seed, 3);
    let mut report = SuiteReport::new("theorem1");
    for _ in 0..trials {
        let k = rng.random_range(4..=200);
        let p = random_prob_vector(&mut rng, k);
        let chain = random_chain(&mut rng, &p);
        let entropies: Result<Vec<f64>> = chain.iter().map(|c| selected_entropy(&p, c)).collect();
        let ok = match &entropies {
            Ok(h) => {
                entropy(&p) + ENTROPY_SLACK >= h[0]
                    && h.windows(2).all(|w| w[1] <= w[0] + ENTROPY_SLACK)
            }
            Err(_) => false,
        };
        report.record(ok, || {
            format!(
                "K={k} chain sizes {:?}: {entropies:?}",
                chain.iter().map(|c| c.len()).collect::<Vec<_>>()
            )
        });
    }
    report
}

/// The policy grid swept by [`krange`].
pub fn krange_policies(num_classes: usize) -> Vec<KPolicy> {
    let mut out = Vec::new();
    for alpha in [min_alpha(num_classes), 2.0, 5.0, 10.0] {
        out.push(KPolicy::linear(alpha, num_classes).expect("alpha within range"));
    }
    for beta in [
        1.2f64.ln(),
        1.4f64.ln(),
        1.8f64.ln().min(max_beta(num_classes)),
        max_beta(num_classes),
    ] {
        out.push(KPolicy::exponential(beta, num_classes).expect("beta within range"));
    }
    out
}

pub fn krange(grid: usize) -> SuiteReport {
    let mut report = SuiteReport::new("krange");
    let grid = grid.max(2);
    for num_classes in [10usize, 200] {
        let lo = 1.0 / num_classes as f64;
        for policy in krange_policies(num_classes) {
            let mut prev = 0;
            let mut monotone = true;
            let mut in_range = true;
            for i in 0..grid {
                let conf = lo + (1.0 - lo) * i as f64 / (grid - 1) as f64;
                match policy.select_k(conf) {
                    Ok(k) => {
                        in_range &= (2..=num_classes).contains(&k);
                        monotone &= k >= prev;
                        prev = k;
                    }
                    Err(_) => in_range = false,
                }
            }
            report.record(in_range && monotone, || {
                format!(
                    "{:?} K={num_classes}: in_range={in_range} monotone={monotone}",
                    policy.variant()
                )
            });
        }
    }
    let reference = KPolicy::linear(5.0, 200).expect("valid");
    for (conf, expected) in [(1.0, 42), (1.0 / 200.0, 2)] {
        let got = reference.select_k(conf).ok();
        report.record(got == Some(expected), || {
            format!("linear alpha=5 K=200 conf={conf}: {got:?} != {expected}")
        });
    }
    report
}

/// Random symmetric similarity matrix. Half the draws use small integer
/// counts, as a real ledger would, so ties are common.
pub fn random_similarity<R: Rng + ?Sized>(rng: &mut R, num_classes: usize) -> SimilarityMatrix {
    let integer = rng.random_bool(0.5);
    let density = rng.random_range(0.1..=1.0);
    let mut cells = vec![0.0; num_classes * num_classes];
    for m in 0..num_classes {
        for n in (m + 1)..num_classes {
            if rng.random_bool(density) {
                cells[m * num_classes + n] = if integer {
                    rng.random_range(0..6u32) as f64 / 8.0
                } else {
                    rng.random::<f64>()
                };
            }
        }
    }
    SimilarityMatrix::from_fn(num_classes, |m, n| cells[m.min(n) * num_classes + m.max(n)])
}

/// Partition, medoid membership, fixed point of the assignment step, and
/// (after convergence) every medoid being its cluster's best member.
pub fn check_cluster_invariants(
    sim: &SimilarityMatrix,
    cs: &ClusterSet,
) -> std::result::Result<(), String> {
    let k = sim.num_classes();
    if cs.medoids.len() != cs.k || cs.clusters.len() != cs.k {
        return Err("cluster count differs from k".into());
    }
    let mut seen = vec![false; k];
    for members in &cs.clusters {
        if members.is_empty() {
            return Err("empty cluster".into());
        }
        for &m in members {
            if m >= k || std::mem::replace(&mut seen[m], true) {
                return Err(format!("class {m} missing or duplicated"));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err("classes not covered".into());
    }
    for (medoid, members) in cs.medoids.iter().zip(&cs.clusters) {
        if !members.contains(medoid) {
            return Err(format!("medoid {medoid} outside its cluster"));
        }
    }
    if cs.converged {
        if assign(sim, &cs.medoids) != cs.assignment() {
            return Err("assignment is not a fixed point".into());
        }
        for (medoid, members) in cs.medoids.iter().zip(&cs.clusters) {
            let own = within_similarity(sim, members, *medoid);
            if members
                .iter()
                .any(|&m| within_similarity(sim, members, m) > own)
            {
                return Err(format!(
                    "medoid {medoid} is not the best member of its cluster"
                ));
            }
        }
    }
    Ok(())
}

pub fn cluster(trials: usize, seed: u64) -> SuiteReport {
    let mut rng = suite_rng(seed, 4);
    let mut report = SuiteReport::new("cluster");
    for _ in 0..trials {
        let num_classes = rng.random_range(2..=32);
        let k = rng.random_range(2..=num_classes);
        let sim = random_similarity(&mut rng, num_classes);
        let cseed = rng.random();
        let result = kmedoids(&sim, k, cseed, DEFAULT_MAX_ITER).and_then(|a| {
            let b = kmedoids(&sim, k, cseed, DEFAULT_MAX_ITER)?;
            Ok((a, b))
        });
        let verdict = match result {
            Ok((a, b)) if a != b => Err("non-deterministic".to_string()),
            Ok((a, _)) => check_cluster_invariants(&sim, &a),
            Err(e) => Err(e.to_string()),
        };
        report.record(verdict.is_ok(), || {
            format!("K={num_classes} k={k} seed={cseed}: {verdict:?}")
        });
    }
    report
}

/// Two planted blocks of four classes each, randomly permuted, with strong
/// intra-block similarity and none across blocks.
pub fn planted_similarity<R: Rng + ?Sized>(rng: &mut R) -> (SimilarityMatrix, Vec<usize>) {
    let mut block = vec![0, 0, 0, 0, 1, 1, 1, 1];
    rand::seq::SliceRandom::shuffle(block.as_mut_slice(), rng);
    let mut cells = [0.0; 64];
    for m in 0..8 {
        for n in (m + 1)..8 {
            if block[m] == block[n] {
                cells[m * 8 + n] = rng.random_range(0.8..=1.0);
            }
        }
    }
    (
        SimilarityMatrix::from_fn(8, |m, n| cells[m.min(n) * 8 + m.max(n)]),
        block,
    )
}

/// Summed similarity of every non-medoid class to its assigned medoid.
pub fn medoid_objective(sim: &SimilarityMatrix, medoids: &[usize]) -> f64 {
    assign(sim, medoids)
        .iter()
        .enumerate()
        .filter(|(m, _)| !medoids.contains(m))
        .map(|(m, &c)| sim.get(m, medoids[c]))
        .sum()
}

pub fn planted_blocks(trials: usize, seed: u64) -> SuiteReport {
    let mut rng = suite_rng(seed, 5);
    let mut report = SuiteReport::new("cluster_planted");
    for trial in 0..trials {
        let (sim, block) = planted_similarity(&mut rng);
        let mut best = (f64::NEG_INFINITY, vec![]);
        for a in 0..8 {
            for b in (a + 1)..8 {
                let obj = medoid_objective(&sim, &[a, b]);
                if obj > best.0 {
                    best = (obj, vec![a, b]);
                }
            }
        }
        let verdict = kmedoids(&sim, 2, trial as u64, DEFAULT_MAX_ITER).map(|cs| {
            let blocks_ok = cs
                .clusters
                .iter()
                .all(|c| c.len() == 4 && c.iter().all(|&m| block[m] == block[c[0]]));
            (blocks_ok && cs.medoids == best.1, cs.medoids)
        });
        report.record(matches!(verdict, Ok((true, _))), || {
            format!(
                "seed {trial}: got {verdict:?}, optimal medoids {:?}",
                best.1
            )
        });
    }
    report
}

pub fn ctt(trials: usize, seed: u64) -> SuiteReport {
    let mut rng = suite_rng(seed, 6);
    let mut report = SuiteReport::new("ctt");
    for _ in 0..trials {
        let num_classes = rng.random_range(2..=16);
        let window = if rng.random_bool(0.5) { 4 } else { 16 };
        let batches = rng.random_range(1..=50);
        let mut ledger = TransitionLedger::new(num_classes, window).expect("valid ledger");
        let mut history: VecDeque<Vec<(usize, usize)>> = VecDeque::new();
        let mut ok = true;
        for _ in 0..batches {
            let n = rng.random_range(0..=64);
            let events: Vec<(usize, usize)> = (0..n)
                .map(|_| {
                    let from = rng.random_range(0..num_classes);
                    let to = (from + rng.random_range(1..num_classes)) % num_classes;
                    (from, to)
                })
                .collect();
            ok &= ledger
                .push_batch(BatchTransitions::new(events.clone()))
                .is_ok();
            history.push_back(events);
            if history.len() > window {
                history.pop_front();
            }
            let mut recount = vec![0u64; num_classes * num_classes];
            for &(f, t) in history.iter().flatten() {
                recount[f * num_classes + t] += 1;
            }
            ok &= ledger.running_sum() == recount.as_slice();
        }
        report.record(ok, || {
            format!("K={num_classes} N_b={window} batches={batches}: running sum drifted")
        });
    }
    report
}

/// Norm-wise relative error of the analytic logit gradient against central
/// differences.
pub fn gradient_error(target: &[f64], logits: &[f64], step: f64) -> f64 {
    let analytic = cross_entropy_grad(target, logits);
    let mut numeric = vec![0.0; logits.len()];
    let mut z = logits.to_vec();
    for i in 0..z.len() {
        let orig = z[i];
        z[i] = orig + step;
        let plus = cross_entropy(target, &z).expect("same shape");
        z[i] = orig - step;
        let minus = cross_entropy(target, &z).expect("same shape");
        z[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * step);
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = inf(&analytic).max(inf(&numeric));
    if scale == 0.0 {
        0.0
    } else {
        inf(&diff) / scale
    }
}

pub fn gradient(trials: usize, seed: u64) -> SuiteReport {
    let mut rng = suite_rng(seed, 7);
    let mut report = SuiteReport::new("gradient");
    for _ in 0..trials {
        let k = rng.random_range(2..=50);
        let scale = rng.random_range(0.1..4.0);
        let logits: Vec<f64> = (0..k)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let target = if rng.random_bool(0.3) {
            ProbVector::one_hot(k, rng.random_range(0..k)).expect("valid class")
        } else {
            random_prob_vector(&mut rng, k)
        };
        let err = gradient_error(target.as_slice(), &logits, 1e-5);
        report.record(err < 1e-5, || format!("K={k}: relative error {err:e}"));
    }
    report
}
