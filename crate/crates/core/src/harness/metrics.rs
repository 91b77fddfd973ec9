use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

use super::config::{ExperimentConfig, Mode};

/// Mean training loss of one epoch; `task` is absent for interleaved epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub task: Option<usize>,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mode: Mode,
    pub tasks: usize,
    pub seed: u64,
    /// Test accuracy per task after all training.
    pub task_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub epoch_loss: Vec<EpochLoss>,
    /// Fraction of test samples whose nearest prototype is their own task's.
    pub context_accuracy: Option<Vec<f64>>,
    /// Clusters formed by online clustering.
    pub clusters: Option<usize>,
    /// Cluster of every first-epoch training batch, per task.
    pub assignments: Option<Vec<Vec<usize>>>,
    /// Not written to metrics files, which stay reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl MetricsRecord {
    /// Equality of everything but the wall clock.
    pub fn same_results(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_clock_s = other.wall_clock_s;
        &a == other
    }

    /// Fraction of each task's first-epoch batches that joined the task's
    /// most frequent cluster.
    pub fn modal_fractions(&self) -> Option<Vec<f64>> {
        let a = self.assignments.as_ref()?;
        Some(a.iter().map(|batches| modal_fraction(batches)).collect())
    }
}

fn modal_fraction(batches: &[usize]) -> f64 {
    if batches.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::BTreeMap::new();
    for &c in batches {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    *counts.values().max().expect("non-empty") as f64 / batches.len() as f64
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One JSON object per line: the config, each epoch, each task evaluation,
/// then a summary.
pub fn write_metrics_jsonl(path: &Path, cfg: &ExperimentConfig, m: &MetricsRecord) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = |v: serde_json::Value| -> Result<()> {
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n").map_err(|e| Error::file(path, e))
    };
    line(json!({"event": "config", "config": cfg}))?;
    for e in &m.epoch_loss {
        line(json!({"event": "epoch", "task": e.task, "epoch": e.epoch, "loss": e.loss}))?;
    }
    for (t, &acc) in m.task_accuracy.iter().enumerate() {
        let ctx = m.context_accuracy.as_ref().map(|c| c[t]);
        line(json!({"event": "evaluation", "task": t, "accuracy": acc, "context_accuracy": ctx}))?;
    }
    line(json!({"event": "summary", "record": m}))?;
    w.flush().map_err(|e| Error::file(path, e))
}

/// Reads the summary record back from a metrics file.
pub fn read_metrics_jsonl(path: &Path) -> Result<MetricsRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    for line in text.lines().rev() {
        let v: serde_json::Value = serde_json::from_str(line)?;
        if v["event"] == "summary" {
            return Ok(serde_json::from_value(v["record"].clone())?);
        }
    }
    Err(Error::Config(format!(
        "{}: no summary record",
        path.display()
    )))
}

/// `task,accuracy,context_accuracy` rows and a final `mean` row.
pub fn write_summary_csv(path: &Path, m: &MetricsRecord) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["task", "accuracy", "context_accuracy"])
        .map_err(csv_err)?;
    for (t, acc) in m.task_accuracy.iter().enumerate() {
        let ctx = m
            .context_accuracy
            .as_ref()
            .map_or(String::new(), |c| c[t].to_string());
        w.write_record([t.to_string(), acc.to_string(), ctx])
            .map_err(csv_err)?;
    }
    let ctx = m
        .context_accuracy
        .as_ref()
        .map_or(String::new(), |c| mean(c).to_string());
    w.write_record(["mean".to_string(), m.mean_accuracy.to_string(), ctx])
        .map_err(csv_err)?;
    w.flush().map_err(|e| Error::file(path, e))
}
