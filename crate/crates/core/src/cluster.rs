//! Similarity-driven k-medoids over the class space.
//!
//! The alternating heuristic:
//!
//! 1. seed `k` distinct medoids uniformly at random;
//! 2. assign every class to the medoid it is most similar to;
//! 3. replace each medoid with the member that has the largest summed
//!    similarity to the rest of its cluster;
//! 4. stop once the medoid set no longer changes, or after `max_iter` rounds.
//!
//! Ties always go to the lowest index: medoids are kept sorted by class index,
//! so "lowest medoid" and "lowest class" coincide.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SocError};
use crate::label::CandidateSet;
use crate::transition::SimilarityMatrix;

pub const DEFAULT_MAX_ITER: usize = 100;

/// A partition of the classes into `k` clusters, each with a medoid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub k: usize,
    pub medoids: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub ledger_version: u64,
    /// False when `max_iter` was reached while medoids were still moving.
    #[serde(default = "default_true")]
    pub converged: bool,
    #[serde(default)]
    pub iterations: usize,
}

fn default_true() -> bool {
    true
}

impl ClusterSet {
    pub fn num_classes(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Index of the cluster containing `class`.
    pub fn cluster_of(&self, class: usize) -> Option<usize> {
        self.clusters
            .iter()
            .position(|c| c.binary_search(&class).is_ok())
    }

    /// Per-class cluster index.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.num_classes()];
        for (i, members) in self.clusters.iter().enumerate() {
            for &m in members {
                out[m] = i;
            }
        }
        out
    }

    /// JSON dump as printed by the `cluster` command.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            k: usize,
            medoids: &'a [usize],
            clusters: &'a [Vec<usize>],
            ledger_version: u64,
            converged: bool,
        }
        Ok(serde_json::to_string(&Dump {
            k: self.k,
            medoids: &self.medoids,
            clusters: &self.clusters,
            ledger_version: self.ledger_version,
            converged: self.converged,
        })?)
    }
}

/// Assigns each class to its most similar medoid; `medoids` must be sorted.
pub fn assign(sim: &SimilarityMatrix, medoids: &[usize]) -> Vec<usize> {
    (0..sim.num_classes())
        .map(|m| {
            let row = sim.row(m);
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (i, &c) in medoids.iter().enumerate() {
                let s = row[c];
                if s > best_sim {
                    best_sim = s;
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Summed similarity of `candidate` to the other members of its cluster.
pub fn within_similarity(sim: &SimilarityMatrix, members: &[usize], candidate: usize) -> f64 {
    let row = sim.row(candidate);
    members
        .iter()
        .filter(|&&l| l != candidate)
        .map(|&l| row[l])
        .sum()
}

fn best_medoid(sim: &SimilarityMatrix, members: &[usize]) -> usize {
    // members are ascending, so strict `>` keeps the lowest index on ties
    let mut best = members[0];
    let mut best_sum = f64::NEG_INFINITY;
    for &cand in members {
        let s = within_similarity(sim, members, cand);
        if s > best_sum {
            best_sum = s;
            best = cand;
        }
    }
    best
}

fn group(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut clusters = vec![Vec::new(); k];
    for (class, &c) in assignment.iter().enumerate() {
        clusters[c].push(class);
    }
    clusters
}

/// Runs the clustering. Deterministic in `(sim, k, seed, max_iter)`.
pub fn kmedoids(
    sim: &SimilarityMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterSet> {
    let num_classes = sim.num_classes();
    if k < 2 || k > num_classes {
        return Err(SocError::InvalidK { k, num_classes });
    }
    let max_iter = max_iter.max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids = rand::seq::index::sample(&mut rng, num_classes, k).into_vec();
    medoids.sort_unstable();

    let mut clusters = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        clusters = group(&assign(sim, &medoids), k);
        let mut next: Vec<usize> = clusters
            .iter()
            .map(|members| best_medoid(sim, members))
            .collect();
        next.sort_unstable();
        if next == medoids {
            converged = true;
            break;
        }
        medoids = next;
    }

    // On non-convergence the last assignment was made against the previous
    // medoids; each new medoid still lies inside its own cluster.
    let mut paired: Vec<(usize, Vec<usize>)> = clusters
        .into_iter()
        .map(|members| {
            let medoid = *medoids
                .iter()
                .find(|m| members.binary_search(m).is_ok())
                .expect("every cluster holds exactly one medoid");
            (medoid, members)
        })
        .collect();
    paired.sort_unstable_by_key(|(m, _)| *m);
    let (medoids, clusters) = paired.into_iter().unzip();

    Ok(ClusterSet {
        k,
        medoids,
        clusters,
        ledger_version: sim.version(),
        converged,
        iterations,
    })
}

/// The cluster containing the predicted class.
pub fn pick_candidates(clusters: &ClusterSet, p_hat: usize) -> Result<CandidateSet> {
    clusters
        .cluster_of(p_hat)
        .map(|i| CandidateSet::new(clusters.clusters[i].iter().copied()))
        .ok_or(SocError::InvalidClass {
            class: p_hat,
            num_classes: clusters.num_classes(),
        })
}

/// Clusterings memoized by `k` for a single similarity snapshot.
///
/// The clustering depends only on `(similarity, k, seed)`, so within one
/// ledger version a given `k` is computed once.
#[derive(Debug, Clone)]
pub struct ClusterCache {
    seed: u64,
    max_iter: usize,
    version: Option<u64>,
    entries: HashMap<usize, ClusterSet>,
}

impl ClusterCache {
    pub fn new(seed: u64, max_iter: usize) -> Self {
        Self {
            seed,
            max_iter,
            version: None,
            entries: HashMap::new(),
        }
    }

    /// Drops all entries if `sim` comes from a different ledger version.
    pub fn refresh(&mut self, sim: &SimilarityMatrix) {
        if self.version != Some(sim.version()) {
            self.entries.clear();
            self.version = Some(sim.version());
        }
    }

    pub fn version(&self) -> Option<u64> {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Clustering for `k`, computing it against `sim` on a miss. Callers must
    /// [`refresh`](Self::refresh) when the similarity changes.
    pub fn get(&mut self, sim: &SimilarityMatrix, k: usize) -> Result<&ClusterSet> {
        if self.version.is_none() {
            self.version = Some(sim.version());
        }
        if !self.entries.contains_key(&k) {
            let cs = kmedoids(sim, k, self.seed, self.max_iter)?;
            self.entries.insert(k, cs);
        }
        Ok(&self.entries[&k])
    }
}
