use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{eval_loss, train_step, Checkpoint, MetricsLog, OptimizerState, Pair, RunConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::objectives::vocab::tokenize;
use crate::objectives::{span_corrupt, SpanCorruptionExample};

const EVAL_SEED_SALT: u64 = 0x5eed_e7a1;

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    /// `(step, batch loss)` for every step.
    pub train_curve: Vec<(u64, f64)>,
    /// `(step, evaluation loss)` at step 0 and every evaluation.
    pub eval_curve: Vec<(u64, f64)>,
}

impl PretrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.eval_curve.first().map_or(f64::NAN, |e| e.1)
    }

    pub fn final_loss(&self) -> f64 {
        self.eval_curve.last().map_or(f64::NAN, |e| e.1)
    }
}

fn to_pair(ex: SpanCorruptionExample) -> Pair {
    Pair {
        source: ex.input_ids,
        target: ex.target_ids,
    }
}

struct Stream {
    tokens: Vec<u32>,
    train_end: usize,
}

impl Stream {
    fn new(corpus: &[String], seq_len: usize, held_out: f64) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in corpus {
            tokens.extend(tokenize(line.trim_end()));
            tokens.extend(tokenize("\n"));
        }
        if corpus.is_empty() || tokens.len() <= corpus.len() {
            return Err(Error::Contract("pre-training corpus is empty".into()));
        }
        // Hold out a tail only when both halves can still supply full chunks.
        let held = (tokens.len() as f64 * held_out) as usize;
        let train_end = if held > 0 && held >= seq_len && tokens.len() - held >= seq_len {
            tokens.len() - held
        } else {
            tokens.len()
        };
        Ok(Self { tokens, train_end })
    }

    fn chunk<'a>(tokens: &'a [u32], seq_len: usize, rng: &mut impl Rng) -> &'a [u32] {
        if tokens.len() <= seq_len {
            return tokens;
        }
        let start = rng.gen_range(0..=tokens.len() - seq_len);
        &tokens[start..start + seq_len]
    }

    fn train(&self) -> &[u32] {
        &self.tokens[..self.train_end]
    }

    fn held_out(&self) -> &[u32] {
        if self.train_end == self.tokens.len() {
            &self.tokens
        } else {
            &self.tokens[self.train_end..]
        }
    }
}

/// Span-denoising pre-training on newline-delimited text.
///
/// The last `run.held_out` of the token stream is reserved for the
/// evaluation loss when both parts can supply full chunks; otherwise the
/// evaluation draws from the whole stream. A non-finite loss or gradient aborts with
/// [`Error::Diverged`] carrying the parameters from before the failing step.
pub fn pretrain(
    model: Model,
    corpus: &[String],
    run: &RunConfig,
    log: &mut MetricsLog,
    checkpoint_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    run.validate()?;
    let corrupt = |chunk: &[u32], rng: &mut ChaCha8Rng| {
        span_corrupt(chunk, run.corruption.span_len, run.corruption.rate, rng).map(to_pair)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let (stream, fixed, eval_set) = if run.fixed_examples {
        if corpus.is_empty() {
            return Err(Error::Contract("pre-training corpus is empty".into()));
        }
        let fixed: Vec<Pair> = corpus
            .iter()
            .map(|line| {
                let tokens = tokenize(line.trim_end());
                corrupt(&tokens[..tokens.len().min(run.sequence_length)], &mut rng)
            })
            .collect::<Result<_>>()?;
        (None, fixed.clone(), fixed)
    } else {
        let stream = Stream::new(corpus, run.sequence_length, run.held_out)?;
        let mut eval_rng = ChaCha8Rng::seed_from_u64(run.seed ^ EVAL_SEED_SALT);
        let eval_set: Vec<Pair> = (0..run.eval_examples.max(1))
            .map(|_| {
                let c = Stream::chunk(stream.held_out(), run.sequence_length, &mut eval_rng);
                corrupt(c, &mut eval_rng)
            })
            .collect::<Result<_>>()?;
        (Some(stream), Vec::new(), eval_set)
    };

    let schedule = run.schedule();
    let mut model = model;
    let mut opt = OptimizerState::new(run.adafactor);
    let mut train_curve = Vec::new();
    let mut eval_curve = Vec::new();

    let initial = eval_loss(&model, &eval_set)?;
    log.record(0, "eval", "loss", initial)?;
    eval_curve.push((0, initial));

    for step in 1..=run.steps {
        let batch: Vec<Pair> = match &stream {
            Some(stream) => (0..run.batch_size)
                .map(|_| {
                    let c = Stream::chunk(stream.train(), run.sequence_length, &mut rng);
                    corrupt(c, &mut rng)
                })
                .collect::<Result<_>>()?,
            None => {
                let first = (step - 1) as usize * run.batch_size;
                (first..first + run.batch_size)
                    .map(|i| fixed[i % fixed.len()].clone())
                    .collect()
            }
        };
        let dropout_seed = (model.config().dropout > 0.0).then(|| run.seed.wrapping_mul(31).wrapping_add(step));
        let loss = match train_step(&mut model, &mut opt, &batch, schedule.lr_at(step), dropout_seed) {
            Ok(l) => l,
            Err(Error::NonFinite(msg)) => {
                log::error!("step {step}: {msg}");
                return Err(Error::Diverged {
                    step,
                    last_good: Box::new(Checkpoint::from_model(&model, step - 1, Some(&opt))),
                });
            }
            Err(e) => return Err(e),
        };
        train_curve.push((step, loss));
        log.record(step, "train", "loss", loss)?;
        if run.is_eval_step(step) {
            let l = eval_loss(&model, &eval_set)?;
            log.record(step, "eval", "loss", l)?;
            log::info!("step {step}: train loss {loss:.4}, eval loss {l:.4}");
            eval_curve.push((step, l));
        }
        if let Some(dir) = checkpoint_dir {
            if run.checkpoint_every > 0 && step % run.checkpoint_every == 0 {
                Checkpoint::from_model(&model, step, Some(&opt)).save(&dir.join(format!("step-{step}.ckpt")))?;
            }
        }
    }
    Ok(PretrainOutcome {
        checkpoint: Checkpoint::from_model(&model, run.steps, Some(&opt)),
        train_curve,
        eval_curve,
    })
}
