//! Offline label selection over a prediction log.
//!
//! A log is newline-delimited JSON, one record per (sample, step):
//!
//! ```text
//! {"schema":"soc-log-v1","id":"a","step":0,"probs":[0.7,0.1,0.1,0.1]}
//! ```
//!
//! Steps are replayed in ascending order, each step as one batch through the
//! transition ledger. Selection is then applied to every record of the final
//! step.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cluster::{pick_candidates, ClusterCache, ClusterSet};
use crate::error::{Result, SocError};
use crate::kselect::KPolicy;
use crate::label::{build_indicator, entropy, select_label, ProbVector};
use crate::transition::{PredictionBank, SimilarityMatrix, TransitionLedger};

pub const LOG_SCHEMA: &str = "soc-log-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionLogRecord {
    pub schema: String,
    pub id: String,
    pub step: u64,
    pub probs: ProbVector,
}

impl PredictionLogRecord {
    pub fn new(id: impl Into<String>, step: u64, probs: ProbVector) -> Self {
        Self {
            schema: LOG_SCHEMA.to_string(),
            id: id.into(),
            step,
            probs,
        }
    }
}

/// One line of `soc select` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: String,
    pub k: usize,
    pub candidate_classes: Vec<usize>,
    pub p_tilde: Vec<f64>,
    pub entropy_before: f64,
    pub entropy_after: f64,
}

/// Reads and validates a whole log. Line numbers in errors are 1-based;
/// blank lines are skipped.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<PredictionLogRecord>> {
    let mut records: Vec<PredictionLogRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionLogRecord =
            serde_json::from_str(&line).map_err(|source| SocError::Parse {
                line: line_no,
                source,
            })?;
        if rec.schema != LOG_SCHEMA {
            return Err(SocError::Schema(format!(
                "line {line_no}: schema {:?}, expected {LOG_SCHEMA:?}",
                rec.schema
            )));
        }
        if let Some(first) = records.first() {
            if first.probs.num_classes() != rec.probs.num_classes() {
                return Err(SocError::Schema(format!(
                    "line {line_no}: {} classes, earlier records have {}",
                    rec.probs.num_classes(),
                    first.probs.num_classes()
                )));
            }
        }
        if !seen.insert((rec.id.clone(), rec.step)) {
            return Err(SocError::Schema(format!(
                "line {line_no}: duplicate record for id {:?} at step {}",
                rec.id, rec.step
            )));
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(SocError::Schema("log is empty".into()));
    }
    Ok(records)
}

/// A log replayed through the tracker.
#[derive(Debug, Clone)]
pub struct Replay {
    pub num_classes: usize,
    pub ledger: TransitionLedger,
    pub similarity: SimilarityMatrix,
    /// Records of the last step, in log order.
    pub final_step: Vec<PredictionLogRecord>,
    pub warnings: Vec<String>,
}

pub fn replay(records: &[PredictionLogRecord], window: usize) -> Result<Replay> {
    let first = records
        .first()
        .ok_or_else(|| SocError::Schema("log is empty".into()))?;
    let num_classes = first.probs.num_classes();
    let mut by_step: BTreeMap<u64, Vec<&PredictionLogRecord>> = BTreeMap::new();
    for rec in records {
        by_step.entry(rec.step).or_default().push(rec);
    }
    let mut warnings = Vec::new();
    if by_step.len() < 2 {
        warnings.push(
            "log has a single step: no transitions observed, similarity is all zero".to_string(),
        );
    }
    let mut ledger = TransitionLedger::new(num_classes, window)?;
    let mut bank = PredictionBank::new();
    for batch in by_step.values() {
        let preds: Vec<(String, usize)> = batch
            .iter()
            .map(|r| (r.id.clone(), r.probs.argmax()))
            .collect();
        ledger.observe_batch(&mut bank, &preds)?;
    }
    let final_step = by_step
        .into_values()
        .next_back()
        .expect("non-empty log")
        .into_iter()
        .cloned()
        .collect();
    Ok(Replay {
        num_classes,
        similarity: ledger.similarity_matrix(),
        ledger,
        final_step,
        warnings,
    })
}

impl Replay {
    /// Selected labels for the final step.
    pub fn select(
        &self,
        policy: &KPolicy,
        seed: u64,
        max_iter: usize,
    ) -> Result<Vec<SelectionRecord>> {
        let mut cache = ClusterCache::new(seed, max_iter);
        cache.refresh(&self.similarity);
        self.final_step
            .iter()
            .map(|rec| {
                let p = &rec.probs;
                let k = policy.select_k(p.confidence())?;
                let candidates = pick_candidates(cache.get(&self.similarity, k)?, p.argmax())?;
                let g = build_indicator(&candidates, self.num_classes)?;
                let sel = select_label(p, &g)?;
                Ok(SelectionRecord {
                    id: rec.id.clone(),
                    k,
                    candidate_classes: candidates.as_slice().to_vec(),
                    entropy_before: entropy(p),
                    entropy_after: entropy(&sel.probs),
                    p_tilde: sel.probs.into_inner(),
                })
            })
            .collect()
    }

    /// Clusterings for each distinct `k` the policy assigns to final-step
    /// records, ascending in `k`.
    pub fn clusterings(
        &self,
        policy: &KPolicy,
        seed: u64,
        max_iter: usize,
    ) -> Result<Vec<ClusterSet>> {
        let mut ks = self
            .final_step
            .iter()
            .map(|r| policy.select_k(r.probs.confidence()))
            .collect::<Result<Vec<_>>>()?;
        ks.sort_unstable();
        ks.dedup();
        let mut cache = ClusterCache::new(seed, max_iter);
        cache.refresh(&self.similarity);
        ks.into_iter()
            .map(|k| cache.get(&self.similarity, k).cloned())
            .collect()
    }
}

/// Writes records as newline-delimited JSON.
pub fn write_ndjson<W: Write, T: Serialize>(records: &[T], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
