//! Probability vectors, candidate sets, selection indicators and selected soft
//! labels.
//!
//! A soft pseudo-label is restricted to a candidate subset of the class space
//! and renormalized:
//!
//! ```text
//! g[c]  = 1 if c in C else 0
//! p~    = (g * p) / sum(g * p)
//! ```
//!
//! Class indices are 0-based throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SocError};
use crate::numeric::{argmax, softmax};

/// Tolerance on the unit-sum invariant of a [`ProbVector`].
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Largest candidate-set size for which selection provably never raises
/// entropy, regardless of how the probability mass is distributed.
pub const ENTROPY_SAFE_CANDIDATES: usize = 11;

/// A probability distribution over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(SocError::InvalidProbVector(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some((i, v)) = probs
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(SocError::InvalidProbVector(format!(
                "entry {i} is {v}, expected a finite non-negative value"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(SocError::InvalidProbVector(format!(
                "entries sum to {total}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    /// Softmax of raw model outputs.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Self::new(softmax(logits))
    }

    pub fn uniform(num_classes: usize) -> Result<Self> {
        Self::new(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn one_hot(num_classes: usize, class: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(SocError::InvalidClass { class, num_classes });
        }
        let mut v = vec![0.0; num_classes];
        v[class] = 1.0;
        Self::new(v)
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Most probable class, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// The largest probability, used as the prediction confidence.
    pub fn confidence(&self) -> f64 {
        self.0[self.argmax()]
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = SocError;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(value: ProbVector) -> Self {
        value.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A set of candidate classes, stored sorted and deduplicated.
///
/// Range checks against the class count happen in [`build_indicator`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateSet(Vec<usize>);

impl CandidateSet {
    pub fn new<I: IntoIterator<Item = usize>>(classes: I) -> Self {
        let mut v: Vec<usize> = classes.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    /// Every class; the plain soft-label path.
    pub fn full(num_classes: usize) -> Self {
        Self((0..num_classes).collect())
    }

    pub fn contains(&self, class: usize) -> bool {
        self.0.binary_search(&class).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl FromIterator<usize> for CandidateSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        Self::new(iter)
    }
}

/// Binary selection mask over the class space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionIndicator {
    mask: Vec<bool>,
}

impl SelectionIndicator {
    pub fn all(num_classes: usize) -> Self {
        Self {
            mask: vec![true; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.mask.len()
    }

    pub fn is_selected(&self, class: usize) -> bool {
        self.mask.get(class).copied().unwrap_or(false)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(c, &on)| on.then_some(c))
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&on| on).count()
    }
}

/// A soft label restricted to its indicator's support and renormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedLabel {
    pub indicator: SelectionIndicator,
    pub probs: ProbVector,
}

/// Builds the selection mask for `candidates` over `num_classes` classes.
pub fn build_indicator(
    candidates: &CandidateSet,
    num_classes: usize,
) -> Result<SelectionIndicator> {
    if candidates.is_empty() || candidates.iter().any(|c| c >= num_classes) {
        return Err(SocError::InvalidCandidateSet { num_classes });
    }
    let mut mask = vec![false; num_classes];
    for c in candidates.iter() {
        mask[c] = true;
    }
    Ok(SelectionIndicator { mask })
}

/// Masks `p` with `g` and renormalizes. Unselected entries are exactly zero.
pub fn select_label(p: &ProbVector, g: &SelectionIndicator) -> Result<SelectedLabel> {
    if p.num_classes() != g.num_classes() {
        return Err(SocError::ShapeMismatch {
            expected: g.num_classes(),
            found: p.num_classes(),
        });
    }
    let mass: f64 = p
        .as_slice()
        .iter()
        .zip(g.mask())
        .filter_map(|(&v, &on)| on.then_some(v))
        .sum();
    if mass <= 0.0 {
        return Err(SocError::ZeroMass);
    }
    let probs: Vec<f64> = p
        .as_slice()
        .iter()
        .zip(g.mask())
        .map(|(&v, &on)| if on { v / mass } else { 0.0 })
        .collect();
    Ok(SelectedLabel {
        indicator: g.clone(),
        probs: ProbVector::new(probs)?,
    })
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &ProbVector) -> f64 {
    entropy_of(p.as_slice())
}

pub(crate) fn entropy_of(probs: &[f64]) -> f64 {
    0.0 - probs
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Probability of the true class if it was selected, else zero.
pub fn obj1_score(p: &ProbVector, g: &SelectionIndicator, y_star: usize) -> Result<f64> {
    let num_classes = p.num_classes();
    if y_star >= num_classes || g.num_classes() != num_classes {
        return Err(SocError::InvalidClass {
            class: y_star,
            num_classes,
        });
    }
    Ok(if g.is_selected(y_star) {
        p.as_slice()[y_star]
    } else {
        0.0
    })
}

/// Number of selected classes.
pub fn obj2_score(g: &SelectionIndicator) -> usize {
    g.count()
}
