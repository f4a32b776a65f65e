//! Analytic FLOPs of one forward pass, counted as 2 × multiply-accumulates
//! over tensor contractions. Softmax, normalization, activations, biases and
//! embedding lookups are not counted.
//!
//! | sublayer (length `n`, width `d`)          | FLOPs                              |
//! |-------------------------------------------|------------------------------------|
//! | one `d×d` projection                      | `2nd²`                             |
//! | GLU conv block (three projections + conv) | `6nd² + 2ndk`                      |
//! | dynamic kernel generation                 | `2ndHk`                            |
//! | self-attention                            | `8nd² + 4n²d`                      |
//! | encoder-decoder attention (`m` queries)   | `4md² + 4nd² + 4mnd`               |
//! | FFN                                       | `4nd·d_ff`                         |
//! | tied output projection                    | `2md·V`                            |
//!
//! The encoder sees `n` tokens and the decoder `m = target_len(n)`, the
//! span-corruption target length for an `n`-token chunk. A training step
//! (forward and backward) costs [`TRAINING_STEP_FACTOR`] forward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConvVariant, ModelConfig};
use crate::objectives::corrupt::target_len;
use crate::objectives::CorruptionConfig;

pub const TRAINING_STEP_FACTOR: u64 = 3;

pub fn projection(n: u64, d_in: u64, d_out: u64) -> u64 {
    2 * n * d_in * d_out
}

pub fn conv(n: u64, d: u64, k: u64) -> u64 {
    2 * n * d * k
}

pub fn dynamic_kernels(n: u64, d: u64, heads: u64, k: u64) -> u64 {
    2 * n * d * heads * k
}

pub fn self_attention(n: u64, d: u64) -> u64 {
    8 * n * d * d + 4 * n * n * d
}

pub fn cross_attention(m: u64, n: u64, d: u64) -> u64 {
    4 * m * d * d + 4 * n * d * d + 4 * m * n * d
}

pub fn ffn(n: u64, d: u64, d_ff: u64) -> u64 {
    4 * n * d * d_ff
}

pub fn output(m: u64, d: u64, vocab: u64) -> u64 {
    2 * m * d * vocab
}

/// Forward FLOPs split by stack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub encoder: u64,
    pub decoder: u64,
    pub output: u64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u64 {
        self.encoder + self.decoder + self.output
    }
}

fn mixer(cfg: &ModelConfig, n: u64, k: u64) -> u64 {
    let (d, h) = (cfg.d_model as u64, cfg.tying_heads as u64);
    match cfg.variant {
        ConvVariant::Light | ConvVariant::Dilated => 3 * projection(n, d, d) + conv(n, d, k),
        ConvVariant::Dynamic => 3 * projection(n, d, d) + conv(n, d, k) + dynamic_kernels(n, d, h, k),
        ConvVariant::Transformer => self_attention(n, d),
    }
}

/// Forward FLOPs for an `n`-token encoder input and `m`-token decoder input.
pub fn breakdown(cfg: &ModelConfig, n: usize, m: usize) -> Result<FlopsBreakdown> {
    cfg.validate()?;
    if n == 0 || m == 0 {
        return Err(Error::Contract("sequence lengths must be positive".into()));
    }
    let (n, m) = (n as u64, m as u64);
    let (d, dff) = (cfg.d_model as u64, cfg.d_ff as u64);
    let widths: Vec<u64> = if cfg.variant.is_conv() {
        cfg.layer_schedule()?.iter().map(|e| e.width as u64).collect()
    } else {
        vec![0; cfg.num_layers]
    };
    let mut b = FlopsBreakdown::default();
    for &k in &widths {
        b.encoder += mixer(cfg, n, k) + ffn(n, d, dff);
        b.decoder += mixer(cfg, m, k) + cross_attention(m, n, d) + ffn(m, d, dff);
    }
    if cfg.has_encoder_cross_attention() {
        b.encoder += self_attention(n, d);
    }
    b.output = output(m, d, cfg.vocab_size as u64);
    Ok(b)
}

/// Decoder length paired with an `n`-token input in benchmarks.
pub fn decoder_len(n: usize) -> usize {
    target_len(n, &CorruptionConfig::default())
}

/// Forward FLOPs of one `n`-token example.
pub fn count_flops(cfg: &ModelConfig, n: usize) -> Result<u64> {
    Ok(breakdown(cfg, n, decoder_len(n))?.total())
}

pub fn training_step_flops(cfg: &ModelConfig, n: usize) -> Result<u64> {
    Ok(TRAINING_STEP_FACTOR * count_flops(cfg, n)?)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
