//! Wall-clock training-step throughput on synthetic token batches.
//!
//! Timings are only meaningful on an otherwise idle machine; the harness runs
//! every measurement sequentially on the calling thread.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::flops::decoder_len;
use crate::error::{Error, Result};
use crate::model::{ConvVariant, Model, ModelConfig};
use crate::objectives::vocab::{BYTE_OFFSET, VOCAB_SIZE};
use crate::tensor::Graph;
use crate::train::{batch_loss, Pair};

pub const WARMUP_ITERS: usize = 3;
/// Default cap on the estimated graph memory of one example.
pub const DEFAULT_MEMORY_BUDGET: u64 = 3 << 29;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Throughput {
    pub examples_per_sec: f64,
    /// Median seconds per timed batch.
    pub median_secs: f64,
}

/// Rough bytes held by the tape and its gradients for one `n`-token example:
/// every recorded value and its gradient, in `f64`.
pub fn estimate_memory(cfg: &ModelConfig, n: usize) -> u64 {
    let (n, m) = (n as u64, decoder_len(n as usize) as u64);
    let (d, dff, h, l) = (
        cfg.d_model as u64,
        cfg.d_ff as u64,
        cfg.num_heads as u64,
        cfg.num_layers as u64,
    );
    // Each attention head records scores, scaled scores, masked scores and
    // probabilities; projections, slices and outputs are width-d tensors.
    let attn = |q: u64, kv: u64| 4 * h * q * kv + 10 * (q + kv) * d;
    let mixer = |len: u64| match cfg.variant {
        ConvVariant::Transformer => attn(len, len),
        _ => 12 * len * d + len * cfg.tying_heads as u64 * 31,
    };
    let ffn = |len: u64| 3 * len * dff + 4 * len * d;
    let per_layer = mixer(n) + ffn(n) + mixer(m) + attn(m, n) + ffn(m);
    let values = l * per_layer + 3 * m * cfg.vocab_size as u64 + cfg.vocab_size as u64 * d;
    values * 8 * 2
}

fn synthetic(rng: &mut impl Rng, len: usize) -> Vec<u32> {
    (0..len)
        .map(|_| rng.gen_range(BYTE_OFFSET..VOCAB_SIZE as u32))
        .collect()
}

/// Median examples/sec of `reps` timed forward+backward steps on `batch`
/// random `n`-token examples, after [`WARMUP_ITERS`] untimed steps. Returns
/// `Ok(None)` when the estimated memory exceeds `memory_budget`.
pub fn measure_throughput(
    cfg: &ModelConfig,
    n: usize,
    batch: usize,
    reps: usize,
    memory_budget: u64,
) -> Result<Option<Throughput>> {
    if batch == 0 || reps == 0 {
        return Err(Error::Config("benchmark batch and reps must be positive".into()));
    }
    if estimate_memory(cfg, n) * batch as u64 > memory_budget {
        return Ok(None);
    }
    let mut cfg = cfg.clone();
    cfg.max_target_len = cfg.max_target_len.max(decoder_len(n));
    let model = Model::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let pairs: Vec<Pair> = (0..batch)
        .map(|_| Pair {
            source: synthetic(&mut rng, n),
            target: synthetic(&mut rng, decoder_len(n)),
        })
        .collect();
    let step = || -> Result<f64> {
        let start = Instant::now();
        let g = Graph::new();
        let (loss, _) = batch_loss(&model, &g, &pairs, None)?;
        g.backward(loss)?;
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..WARMUP_ITERS {
        step()?;
    }
    let mut times = (0..reps).map(|_| step()).collect::<Result<Vec<f64>>>()?;
    times.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 {
        times[reps / 2]
    } else {
        0.5 * (times[reps / 2 - 1] + times[reps / 2])
    };
    let median = median.max(f64::MIN_POSITIVE);
    Ok(Some(Throughput {
        examples_per_sec: batch as f64 / median,
        median_secs: median,
    }))
}
