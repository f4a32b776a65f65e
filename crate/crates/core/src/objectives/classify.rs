//! Classification as generation: the source is `"<task>: <text>"` and the
//! target is the label's canonical string followed by end-of-sequence.
//!
//! | task        | labels                 | positive class |
//! |-------------|------------------------|----------------|
//! | `sentiment` | `negative`, `positive` | `positive`     |

use super::vocab::{detokenize, tokenize, EOS_ID};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Task {
    pub name: &'static str,
    pub labels: &'static [&'static str],
    /// Index into `labels` of the class F1 is computed for.
    pub positive: usize,
}

pub const SENTIMENT: Task = Task {
    name: "sentiment",
    labels: &["negative", "positive"],
    positive: 1,
};

pub const TASKS: &[Task] = &[SENTIMENT];

impl Task {
    pub fn lookup(name: &str) -> Result<Task> {
        TASKS
            .iter()
            .find(|t| t.name == name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown task `{name}`")))
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| Error::UnknownLabel {
                task: self.name.to_string(),
                label: label.to_string(),
            })
    }

    pub fn source(&self, text: &str) -> Vec<u32> {
        let mut ids = tokenize(&format!("{}: {text}", self.name));
        ids.push(EOS_ID);
        ids
    }

    pub fn target(&self, label: usize) -> Vec<u32> {
        let mut ids = tokenize(self.labels[label]);
        ids.push(EOS_ID);
        ids
    }

    /// Label generated by a model, if the output is exactly one label string.
    /// A trailing end-of-sequence token is allowed.
    pub fn parse(&self, generated: &[u32]) -> Option<usize> {
        let body = generated.strip_suffix(&[EOS_ID]).unwrap_or(generated);
        let text = detokenize(body);
        self.labels.iter().position(|&l| l == text)
    }
}

pub fn cast_classification(task_name: &str, text: &str, label: &str) -> Result<(Vec<u32>, Vec<u32>)> {
    let task = Task::lookup(task_name)?;
    let label = task.label_index(label)?;
    Ok((task.source(text), task.target(label)))
}
