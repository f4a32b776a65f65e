use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub correct: usize,
    pub total: usize,
}

impl Confusion {
    /// Records one example. `predicted` is `None` when the output did not
    /// parse as a label, which counts as wrong.
    pub fn add(&mut self, gold: usize, predicted: Option<usize>, positive: usize) {
        self.total += 1;
        if predicted == Some(gold) {
            self.correct += 1;
        }
        match (gold == positive, predicted == Some(positive)) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    pub fn metrics(&self) -> EvalMetrics {
        EvalMetrics {
            accuracy: if self.total == 0 {
                0.0
            } else {
                self.correct as f64 / self.total as f64
            },
            f1: binary_f1(self.tp, self.fp, self.fn_),
            count: self.total,
        }
    }
}

/// `2TP / (2TP + FP + FN)`, taken as 1 when there is nothing to find and
/// nothing was predicted.
pub fn binary_f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// Append-only `step,split,metric,value` log. Rows are also kept in memory.
#[derive(Default)]
pub struct MetricsLog {
    file: Option<(PathBuf, BufWriter<File>)>,
    rows: Vec<MetricRow>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "step,split,metric,value";

    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        if fresh {
            writeln!(w, "{}", Self::HEADER).map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            file: Some((path.to_path_buf(), w)),
            rows: Vec::new(),
        })
    }

    pub fn record(&mut self, step: u64, split: &str, metric: &str, value: f64) -> Result<()> {
        if let Some((path, w)) = &mut self.file {
            writeln!(w, "{step},{split},{metric},{value}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        self.rows.push(MetricRow {
            step,
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    /// `(step, value)` pairs of one series.
    pub fn series(&self, split: &str, metric: &str) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| (r.step, r.value))
            .collect()
    }
}
