use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_CSV_HEADER: &str =
    "iter,test_top1,pl_acc,mean_entropy_sel,mean_entropy_raw,mean_zobj1,mean_zobj2,k_mean";

pub const OBJECTIVES_CSV_HEADER: &str = "index,label,pred,z_obj1,entropy_raw,entropy_sel,z_obj2";

/// One evaluation over the test and unlabeled sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub test_top1: f64,
    /// Argmax accuracy on the unlabeled set against its hidden labels.
    pub pl_acc: f64,
    pub mean_entropy_sel: f64,
    pub mean_entropy_raw: f64,
    pub mean_zobj1: f64,
    pub mean_zobj2: f64,
    pub k_mean: f64,
    /// Largest candidate set seen in this evaluation. Not part of the CSV.
    pub max_zobj2: usize,
}

/// Per-sample objective values at one point in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleObjective {
    pub index: usize,
    pub label: usize,
    pub pred: usize,
    pub z_obj1: f64,
    pub entropy_raw: f64,
    pub entropy_sel: f64,
    pub z_obj2: usize,
}

pub fn write_metrics_csv<W: Write>(history: &[MetricsRecord], mut out: W) -> Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in history {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.iter,
            r.test_top1,
            r.pl_acc,
            r.mean_entropy_sel,
            r.mean_entropy_raw,
            r.mean_zobj1,
            r.mean_zobj2,
            r.k_mean
        )?;
    }
    Ok(())
}

pub fn write_objectives_csv<W: Write>(rows: &[SampleObjective], mut out: W) -> Result<()> {
    writeln!(out, "{OBJECTIVES_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{}",
            r.index, r.label, r.pred, r.z_obj1, r.entropy_raw, r.entropy_sel, r.z_obj2
        )?;
    }
    Ok(())
}
