use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::Confusion;
use super::{train_step, Checkpoint, EvalMetrics, MetricsLog, OptimizerState, Pair, RunConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::objectives::io::read_labeled;
use crate::objectives::Task;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassExample {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
    pub label: usize,
}

impl ClassExample {
    pub fn new(task: &Task, text: &str, label: &str) -> Result<Self> {
        let label = task.label_index(label)?;
        Ok(Self {
            source: task.source(text),
            target: task.target(label),
            label,
        })
    }
}

pub fn load_classification(path: &Path, task: &Task) -> Result<Vec<ClassExample>> {
    let rows = read_labeled(path)?
        .map(|row| row.and_then(|r| ClassExample::new(task, &r.text, &r.label)))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{} has no examples", path.display())));
    }
    Ok(rows)
}

/// Accuracy of greedily generated label strings and binary F1 on the task's
/// positive class. Outputs that are not a label count as wrong.
pub fn evaluate(model: &Model, data: &[ClassExample], task: &Task) -> Result<EvalMetrics> {
    let max_len = task.labels.iter().map(|l| l.len()).max().unwrap_or(1) + 1;
    let mut c = Confusion::default();
    for ex in data {
        let out = model.greedy_decode(&ex.source, max_len)?;
        c.add(ex.label, task.parse(&out), task.positive);
    }
    Ok(c.metrics())
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Parameters at the best validation accuracy seen.
    pub best: Checkpoint,
    /// Parameters after the last step.
    pub last: Checkpoint,
    /// Validation metrics at every evaluation.
    pub history: Vec<(u64, EvalMetrics)>,
    /// Best-so-far validation accuracy after each evaluation.
    pub peak_curve: Vec<(u64, f64)>,
    pub peak: EvalMetrics,
    pub peak_step: u64,
}

/// Teacher-forced fine-tuning on `train`, evaluated on `valid` every
/// `eval_every` steps. The first evaluation happens before any update.
pub fn finetune(
    model: Model,
    train: &[ClassExample],
    valid: &[ClassExample],
    task: &Task,
    run: &RunConfig,
    log: &mut MetricsLog,
) -> Result<FinetuneOutcome> {
    run.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Contract(
            "fine-tuning needs non-empty train and validation sets".into(),
        ));
    }
    let schedule = run.schedule();
    let mut model = model;
    let mut opt = OptimizerState::new(run.adafactor);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut history = Vec::new();
    let mut peak_curve = Vec::new();
    let mut best: Option<(u64, EvalMetrics, Checkpoint)> = None;

    for step in 0..=run.steps {
        if step > 0 {
            let batch: Vec<Pair> = (0..run.batch_size)
                .map(|_| {
                    let ex = &train[rng.gen_range(0..train.len())];
                    Pair {
                        source: ex.source.clone(),
                        target: ex.target.clone(),
                    }
                })
                .collect();
            let dropout_seed = (model.config().dropout > 0.0).then(|| run.seed.wrapping_mul(31).wrapping_add(step));
            let loss = train_step(&mut model, &mut opt, &batch, schedule.lr_at(step), dropout_seed)?;
            log.record(step, "train", "loss", loss)?;
        }
        if !run.is_eval_step(step) {
            continue;
        }
        let m = evaluate(&model, valid, task)?;
        log.record(step, "valid", "accuracy", m.accuracy)?;
        log.record(step, "valid", "f1", m.f1)?;
        log::info!("step {step}: accuracy {:.4}, f1 {:.4}", m.accuracy, m.f1);
        history.push((step, m));
        if best.as_ref().map_or(true, |b| m.accuracy > b.1.accuracy) {
            best = Some((step, m, Checkpoint::from_model(&model, step, None)));
        }
        let peak = best.as_ref().expect("set above").1.accuracy;
        log.record(step, "valid", "peak_accuracy", peak)?;
        peak_curve.push((step, peak));
    }
    let (peak_step, peak, best) = best.expect("step 0 is always evaluated");
    Ok(FinetuneOutcome {
        best,
        last: Checkpoint::from_model(&model, run.steps, Some(&opt)),
        history,
        peak_curve,
        peak,
        peak_step,
    })
}
