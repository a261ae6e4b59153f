//! Small-scale training simulator on synthetic hierarchical data.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod harness;
pub mod metrics;
pub mod model;

pub use augment::{augment, AugmentConfig, Strength};
pub use config::{Method, SimConfig};
pub use dataset::{generate_dataset, Dataset, Example, SyntheticDatasetSpec};
pub use harness::{run, RunResult, SimState, Trainer};
pub use metrics::{
    write_metrics_csv, write_objectives_csv, MetricsRecord, SampleObjective, METRICS_CSV_HEADER,
    OBJECTIVES_CSV_HEADER,
};
pub use model::{cosine_lr, SgdMomentum, SoftmaxModel};
