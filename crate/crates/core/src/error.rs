use thiserror::Error;

pub type Result<T, E = SocError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SocError {
    #[error("invalid probability vector: {0}")]
    InvalidProbVector(String),

    #[error("candidate set is empty or out of range for {num_classes} classes")]
    InvalidCandidateSet { num_classes: usize },

    #[error("selected probability mass is zero")]
    ZeroMass,

    #[error("class {class} is out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },

    #[error("cluster count k={k} is outside [2, {num_classes}]")]
    InvalidK { k: usize, num_classes: usize },

    #[error("confidence {0} is outside [0, 1]")]
    InvalidConfidence(f64),

    #[error("invalid k-selection policy: {0}")]
    InvalidPolicy(String),

    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("training diverged at iteration {0}")]
    DivergedAtIteration(usize),

    #[error("invalid snapshot: {0}")]
    Snapshot(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("unknown verification suite {0:?}")]
    UnknownSuite(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
