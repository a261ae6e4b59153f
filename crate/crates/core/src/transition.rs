//! Class transition tracking.
//!
//! Each sample's last argmax prediction is kept in a [`PredictionBank`]. When a
//! new prediction for the sample differs from the banked one, a `(from, to)`
//! transition event is recorded for the current batch. The [`TransitionLedger`]
//! keeps the event lists of the most recent `N_b` batches plus a dense running
//! sum of their counts, so evicting a batch costs only its own events.
//!
//! Similarity between two classes is the symmetrized window-average
//! transition count:
//!
//! ```text
//! f_sim(m, n) = (C[m][n] + C[n][m]) / 2,   C = running_sum / window_len
//! ```

use std::collections::{HashMap, VecDeque};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SocError};

/// Similarity of a class to itself. Keeps every class assigned to itself when
/// it is a medoid.
pub const MAX_SIM: f64 = f64::INFINITY;

/// Magic string identifying a serialized ledger.
pub const SNAPSHOT_MAGIC: &str = "SOC-CTT-v1";

/// Last argmax prediction per sample. `None` marks a registered sample that
/// has not been observed yet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionBank<Id: Eq + Hash> {
    last_pred: HashMap<Id, Option<usize>>,
}

impl<Id: Eq + Hash> Default for PredictionBank<Id> {
    fn default() -> Self {
        Self {
            last_pred: HashMap::new(),
        }
    }
}

impl<Id: Eq + Hash + Clone> PredictionBank<Id> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `id` as unobserved if it is not already known.
    pub fn register(&mut self, id: Id) {
        self.last_pred.entry(id).or_insert(None);
    }

    /// `None` if the id was never seen, `Some(None)` if registered but
    /// unobserved.
    pub fn get(&self, id: &Id) -> Option<Option<usize>> {
        self.last_pred.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.last_pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.last_pred.is_empty()
    }
}

/// Transition events observed in one batch. Self-transitions never appear.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BatchTransitions {
    pub events: Vec<(usize, usize)>,
}

impl BatchTransitions {
    pub fn new(events: Vec<(usize, usize)>) -> Self {
        Self { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Rolling window of per-batch transition events with a dense running sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLedger {
    num_classes: usize,
    capacity: usize,
    window: VecDeque<BatchTransitions>,
    running_sum: Vec<u64>,
    version: u64,
}

impl TransitionLedger {
    /// A ledger over `num_classes` classes averaging the last `capacity` batches.
    pub fn new(num_classes: usize, capacity: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(SocError::InvalidClass {
                class: num_classes,
                num_classes,
            });
        }
        if capacity == 0 {
            return Err(SocError::Snapshot(
                "window capacity must be at least 1".into(),
            ));
        }
        Ok(Self {
            num_classes,
            capacity,
            window: VecDeque::with_capacity(capacity.min(4096)),
            running_sum: vec![0; num_classes * num_classes],
            version: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of batches currently in the window.
    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn window(&self) -> impl Iterator<Item = &BatchTransitions> {
        self.window.iter()
    }

    /// Incremented by exactly one per recorded batch.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Summed transition count `from -> to` over the window.
    pub fn count(&self, from: usize, to: usize) -> u64 {
        self.running_sum[from * self.num_classes + to]
    }

    pub fn running_sum(&self) -> &[u64] {
        &self.running_sum
    }

    /// Records one batch of `(sample id, predicted class)` pairs, updating the
    /// bank and returning the transitions it produced.
    ///
    /// The whole batch is validated before anything is mutated. A sample seen
    /// for the first time (or still unobserved) records no transition.
    pub fn observe_batch<Id: Eq + Hash + Clone>(
        &mut self,
        bank: &mut PredictionBank<Id>,
        batch: &[(Id, usize)],
    ) -> Result<BatchTransitions> {
        if let Some(&(_, class)) = batch.iter().find(|(_, c)| *c >= self.num_classes) {
            return Err(SocError::InvalidClass {
                class,
                num_classes: self.num_classes,
            });
        }
        let mut events = Vec::new();
        for (id, class) in batch {
            let slot = bank.last_pred.entry(id.clone()).or_insert(None);
            if let Some(prev) = *slot {
                if prev != *class {
                    events.push((prev, *class));
                }
            }
            *slot = Some(*class);
        }
        let batch = BatchTransitions::new(events);
        self.advance(batch.clone());
        Ok(batch)
    }

    /// Appends a pre-computed batch of events.
    pub fn push_batch(&mut self, batch: BatchTransitions) -> Result<()> {
        self.validate(&batch)?;
        self.advance(batch);
        Ok(())
    }

    fn validate(&self, batch: &BatchTransitions) -> Result<()> {
        for &(from, to) in &batch.events {
            let bad = if from >= self.num_classes { from } else { to };
            if from >= self.num_classes || to >= self.num_classes {
                return Err(SocError::InvalidClass {
                    class: bad,
                    num_classes: self.num_classes,
                });
            }
            if from == to {
                return Err(SocError::Snapshot(format!(
                    "self-transition {from} -> {to} is not a valid event"
                )));
            }
        }
        Ok(())
    }

    fn advance(&mut self, batch: BatchTransitions) {
        if self.window.len() == self.capacity {
            if let Some(old) = self.window.pop_front() {
                for (from, to) in old.events {
                    self.running_sum[from * self.num_classes + to] -= 1;
                }
            }
        }
        for &(from, to) in &batch.events {
            self.running_sum[from * self.num_classes + to] += 1;
        }
        self.window.push_back(batch);
        self.version += 1;
    }

    /// Symmetrized average transition frequency between two classes.
    ///
    /// Averages over the batches actually in the window, not the capacity.
    /// Returns [`MAX_SIM`] when `m == n` and 0 on an empty window.
    pub fn similarity(&self, m: usize, n: usize) -> f64 {
        if m == n {
            return MAX_SIM;
        }
        if self.window.is_empty() {
            return 0.0;
        }
        let pair = self.count(m, n) + self.count(n, m);
        pair as f64 / (2.0 * self.window.len() as f64)
    }

    pub fn similarity_matrix(&self) -> SimilarityMatrix {
        let k = self.num_classes;
        let mut values = vec![0.0; k * k];
        for m in 0..k {
            for n in 0..k {
                values[m * k + n] = self.similarity(m, n);
            }
        }
        SimilarityMatrix {
            num_classes: k,
            values,
            version: self.version,
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            magic: SNAPSHOT_MAGIC.to_string(),
            num_classes: self.num_classes,
            window_capacity: self.capacity,
            window: self.window.iter().cloned().collect(),
            version: self.version,
        }
    }

    /// Rebuilds a ledger from a snapshot, recounting the running sum.
    pub fn from_snapshot(snapshot: LedgerSnapshot) -> Result<Self> {
        if snapshot.magic != SNAPSHOT_MAGIC {
            return Err(SocError::Snapshot(format!(
                "unexpected magic {:?}, expected {SNAPSHOT_MAGIC:?}",
                snapshot.magic
            )));
        }
        if snapshot.window.len() > snapshot.window_capacity {
            return Err(SocError::Snapshot(format!(
                "window holds {} batches but capacity is {}",
                snapshot.window.len(),
                snapshot.window_capacity
            )));
        }
        if (snapshot.version as u128) < snapshot.window.len() as u128 {
            return Err(SocError::Snapshot(
                "version is older than the window".into(),
            ));
        }
        let mut ledger = Self::new(snapshot.num_classes, snapshot.window_capacity)?;
        for batch in snapshot.window {
            ledger.push_batch(batch)?;
        }
        ledger.version = snapshot.version;
        Ok(ledger)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.snapshot())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_snapshot(serde_json::from_str(s)?)
    }
}

/// Serialized form of a [`TransitionLedger`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub magic: String,
    pub num_classes: usize,
    pub window_capacity: usize,
    pub window: Vec<BatchTransitions>,
    pub version: u64,
}

/// Dense symmetric class-similarity matrix with [`MAX_SIM`] on the diagonal,
/// tagged with the ledger version it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    num_classes: usize,
    values: Vec<f64>,
    version: u64,
}

impl SimilarityMatrix {
    /// Builds a matrix from `f(m, n)` evaluated for `m < n` and mirrored.
    pub fn from_fn<F: FnMut(usize, usize) -> f64>(num_classes: usize, mut f: F) -> Self {
        let k = num_classes;
        let mut values = vec![0.0; k * k];
        for m in 0..k {
            values[m * k + m] = MAX_SIM;
            for n in (m + 1)..k {
                let v = f(m, n);
                values[m * k + n] = v;
                values[n * k + m] = v;
            }
        }
        Self {
            num_classes,
            values,
            version: 0,
        }
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[m * self.num_classes + n]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.num_classes..(m + 1) * self.num_classes]
    }
}
