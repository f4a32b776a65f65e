//! Optimizer, learning-rate schedules, training loops, metrics and checkpoints.

pub mod adafactor;
mod checkpoint;
mod finetune;
pub mod metrics;
mod pretrain;
pub mod schedule;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use adafactor::{AdafactorConfig, OptimizerState};
pub use checkpoint::Checkpoint;
pub use finetune::{evaluate, finetune, load_classification, ClassExample, FinetuneOutcome};
pub use metrics::{EvalMetrics, MetricsLog};
pub use pretrain::{pretrain, PretrainOutcome};
pub use schedule::{lr_at, LrSchedule, LR_GRID};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::objectives::loss::{pad_mask, seq_cross_entropy};
use crate::objectives::CorruptionConfig;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrMode {
    InverseSqrt,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Tokens per pre-training chunk before corruption.
    pub sequence_length: usize,
    pub lr_mode: LrMode,
    /// Rate used in constant mode.
    pub lr: f64,
    pub warmup: u64,
    /// Require a constant rate from [`LR_GRID`].
    pub lr_grid: bool,
    /// Evaluate every this many steps (and at the first and last step).
    pub eval_every: u64,
    /// Held-out examples for pre-training evaluation.
    pub eval_examples: usize,
    /// Fraction of the pre-training token stream reserved for evaluation; 0
    /// evaluates on the training stream itself.
    pub held_out: f64,
    /// Corrupt every corpus line once (truncated to `sequence_length`) and
    /// cycle through those examples in order, evaluating on the same set.
    pub fixed_examples: bool,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub corruption: CorruptionConfig,
    pub adafactor: AdafactorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            sequence_length: 64,
            lr_mode: LrMode::InverseSqrt,
            lr: 0.001,
            warmup: schedule::DEFAULT_WARMUP,
            lr_grid: false,
            eval_every: 100,
            eval_examples: 32,
            held_out: 0.1,
            fixed_examples: false,
            checkpoint_every: 0,
            seed: 0,
            corruption: CorruptionConfig::default(),
            adafactor: AdafactorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn schedule(&self) -> LrSchedule {
        match self.lr_mode {
            LrMode::InverseSqrt => LrSchedule::InverseSqrt { warmup: self.warmup },
            LrMode::Constant => LrSchedule::Constant { value: self.lr },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.sequence_length == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, sequence_length and eval_every must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr={} must be finite and non-negative", self.lr)));
        }
        if !(0.0..0.5).contains(&self.held_out) {
            return Err(Error::Config(format!(
                "held_out={} must lie in [0, 0.5)",
                self.held_out
            )));
        }
        if self.lr_grid {
            self.schedule().check_grid()?;
        }
        Ok(())
    }

    fn is_eval_step(&self, step: u64) -> bool {
        step == 0 || step == self.steps || step % self.eval_every == 0
    }
}

/// One teacher-forced sequence pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

/// Mean over `batch` of each pair's token-averaged cross-entropy.
pub fn batch_loss<'g>(
    model: &Model,
    g: &'g Graph,
    batch: &[Pair],
    dropout_seed: Option<u64>,
) -> Result<(Var<'g>, BTreeMap<String, Var<'g>>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut bound = model.bind(g);
    if let Some(seed) = dropout_seed {
        bound = bound.with_dropout(seed);
    }
    let mut total: Option<Var<'g>> = None;
    for p in batch {
        let logits = bound.forward(&p.source, &p.target)?;
        let l = seq_cross_entropy(logits, &p.target, &pad_mask(&p.target))?;
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    let loss = total.expect("non-empty").scale(1.0 / batch.len() as f64);
    Ok((loss, bound.vars().clone()))
}

/// Evaluation loss of `batch` without recording gradients.
pub fn eval_loss(model: &Model, batch: &[Pair]) -> Result<f64> {
    let mut sum = 0.0;
    for p in batch {
        let g = Graph::new();
        let logits = model.bind_frozen(&g).forward(&p.source, &p.target)?;
        sum += seq_cross_entropy(logits, &p.target, &pad_mask(&p.target))?.item();
    }
    Ok(sum / batch.len() as f64)
}

/// Forward, backward and one optimizer update. Returns the batch loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut OptimizerState,
    batch: &[Pair],
    lr: f64,
    dropout_seed: Option<u64>,
) -> Result<f64> {
    let g = Graph::new();
    let (loss, vars) = batch_loss(model, &g, batch, dropout_seed)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    g.backward(loss)?;
    let grads: BTreeMap<String, Tensor> = vars.iter().map(|(n, &v)| (n.clone(), g.grad_or_zeros(v))).collect();
    opt.step(model.params_mut(), &grads, lr)?;
    Ok(value)
}
