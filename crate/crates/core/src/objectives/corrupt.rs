//! Span corruption: spans of exactly `span_len` tokens are cut out, each is
//! replaced in the input by the next sentinel, and the target lists every
//! `(sentinel, span)` pair followed by end-of-sequence.
//!
//! The number of spans is `max(1, round(round(rate·n) / span_len))` whenever
//! `rate > 0`. Spans never overlap, never touch, and never run past the end.
//! Start positions are drawn uniformly over all valid placements by sampling
//! the free gaps between spans, so no rejection loop is needed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{sentinel, sentinel_index, EOS_ID, NUM_SENTINELS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    pub span_len: usize,
    pub rate: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            span_len: 3,
            rate: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCorruptionExample {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub original_len: usize,
}

impl SpanCorruptionExample {
    /// Tokens hidden behind sentinels.
    pub fn masked_count(&self) -> usize {
        self.original_len + self.num_spans() - self.input_ids.len()
    }

    pub fn num_spans(&self) -> usize {
        self.target_ids.iter().filter(|&&t| sentinel_index(t).is_some()).count()
    }
}

/// Spans a sequence of length `n` receives.
pub fn num_spans(n: usize, span_len: usize, rate: f64) -> usize {
    if rate <= 0.0 || n < 2 {
        return 0;
    }
    let noise = ((rate * n as f64).round() as usize).clamp(1, n - 1);
    ((noise as f64 / span_len as f64).round() as usize).max(1)
}

/// Target length for a length-`n` input: one sentinel plus `span_len` tokens
/// per span, then end-of-sequence.
pub fn target_len(n: usize, cfg: &CorruptionConfig) -> usize {
    num_spans(n, cfg.span_len, cfg.rate) * (cfg.span_len + 1) + 1
}

/// Sorted start positions of `count` spans of `span_len` in `n` positions,
/// with at least one untouched token between neighbours.
pub fn place_spans(n: usize, span_len: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if count > NUM_SENTINELS as usize {
        return Err(Error::Placement(format!(
            "{count} spans need more than the {NUM_SENTINELS} available sentinels"
        )));
    }
    // Free tokens after reserving the spans and the mandatory one-token gaps.
    let needed = count * (span_len + 1) - 1;
    let Some(free) = n.checked_sub(needed) else {
        return Err(Error::Placement(format!(
            "{count} non-adjacent spans of length {span_len} do not fit in {n} tokens"
        )));
    };
    let mut picks = rand::seq::index::sample(rng, free + count, count).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().enumerate().map(|(i, c)| c + i * span_len).collect())
}

/// Cuts the spans starting at `starts` out of `items`. Works on any token
/// type so previews can corrupt whole words.
pub fn apply_spans<T: Clone>(
    items: &[T],
    starts: &[usize],
    span_len: usize,
    sentinel: impl Fn(usize) -> T,
    eos: T,
) -> (Vec<T>, Vec<T>) {
    let mut input = Vec::with_capacity(items.len());
    let mut target = Vec::with_capacity(starts.len() * (span_len + 1) + 1);
    let mut pos = 0;
    for (s, &start) in starts.iter().enumerate() {
        input.extend_from_slice(&items[pos..start]);
        input.push(sentinel(s));
        target.push(sentinel(s));
        target.extend_from_slice(&items[start..start + span_len]);
        pos = start + span_len;
    }
    input.extend_from_slice(&items[pos..]);
    target.push(eos);
    (input, target)
}

pub fn span_corrupt(tokens: &[u32], span_len: usize, rate: f64, rng: &mut impl Rng) -> Result<SpanCorruptionExample> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Contract(format!("corruption rate {rate} must lie in [0, 1)")));
    }
    if span_len == 0 {
        return Err(Error::Contract("span length must be positive".into()));
    }
    let count = num_spans(tokens.len(), span_len, rate);
    if count > 0 && tokens.len() < span_len {
        return Err(Error::Contract(format!(
            "sequence of {} tokens is shorter than the span length {span_len}",
            tokens.len()
        )));
    }
    let starts = place_spans(tokens.len(), span_len, count, rng)?;
    let (input_ids, target_ids) = apply_spans(tokens, &starts, span_len, sentinel, EOS_ID);
    Ok(SpanCorruptionExample {
        input_ids,
        target_ids,
        original_len: tokens.len(),
    })
}

/// Splices target spans back in place of their sentinels.
pub fn reconstruct(input_ids: &[u32], target_ids: &[u32]) -> Result<Vec<u32>> {
    let bad = |why: &str| Error::Contract(format!("malformed corruption target: {why}"));
    let Some((&EOS_ID, body)) = target_ids.split_last() else {
        return Err(bad("missing end-of-sequence"));
    };
    let mut spans: Vec<&[u32]> = Vec::new();
    let mut rest = body;
    while let Some((&head, tail)) = rest.split_first() {
        if sentinel_index(head) != Some(spans.len()) {
            return Err(bad("sentinels out of order"));
        }
        let end = tail
            .iter()
            .position(|&t| sentinel_index(t).is_some())
            .unwrap_or(tail.len());
        spans.push(&tail[..end]);
        rest = &tail[end..];
    }
    let mut out = Vec::with_capacity(input_ids.len() + body.len());
    let mut used = 0;
    for &t in input_ids {
        match sentinel_index(t) {
            Some(i) if i == used && i < spans.len() => {
                out.extend_from_slice(spans[i]);
                used += 1;
            }
            Some(_) => return Err(bad("input sentinel has no matching span")),
            None => out.push(t),
        }
    }
    if used != spans.len() {
        return Err(bad("target span never used"));
    }
    Ok(out)
}
