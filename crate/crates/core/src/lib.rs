//! Soft pseudo-label selection for semi-supervised classification.
//!
//! Predictions on unlabeled data are tracked over a sliding window of
//! batches; classes the model keeps flipping between are treated as similar
//! and clustered with k-medoids. Each pseudo-label keeps only the probability
//! mass inside the cluster of its argmax class, with the cluster count driven
//! by the prediction's confidence.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod error;
pub mod kselect;
pub mod label;
pub mod losses;
pub mod numeric;
pub mod replay;
pub mod sim;
pub mod transition;
pub mod verify;

pub use cluster::{kmedoids, pick_candidates, ClusterCache, ClusterSet};
pub use error::{Result, SocError};
pub use kselect::{select_k, KPolicy, KVariant};
pub use label::{
    build_indicator, entropy, obj1_score, obj2_score, select_label, CandidateSet, ProbVector,
    SelectedLabel, SelectionIndicator,
};
pub use transition::{
    BatchTransitions, LedgerSnapshot, PredictionBank, SimilarityMatrix, TransitionLedger, MAX_SIM,
    SNAPSHOT_MAGIC,
};
