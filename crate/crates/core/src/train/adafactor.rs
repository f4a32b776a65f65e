//! Adafactor without momentum or relative step sizes.
//!
//! At step `t` (1-based) with `β₂ = 1 − t^(−0.8)` and `G² = g² + ε₁`:
//! matrices keep row and column means `R ← β₂R + (1−β₂)·rowmean(G²)` and
//! `C ← β₂C + (1−β₂)·colmean(G²)` and estimate `V̂ = R Cᵀ / mean(R)`; every
//! other tensor keeps the full `V ← β₂V + (1−β₂)G²`. The update
//! `U = g / √V̂` is scaled down to RMS at most `clip_threshold`, then
//! `p ← p − lr·U`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdafactorConfig {
    pub decay_exponent: f64,
    pub eps1: f64,
    pub clip_threshold: f64,
}

impl Default for AdafactorConfig {
    fn default() -> Self {
        Self {
            decay_exponent: 0.8,
            eps1: 1e-30,
            clip_threshold: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SecondMoment {
    Factored { row: Vec<f64>, col: Vec<f64> },
    Full(Vec<f64>),
}

impl SecondMoment {
    fn for_shape(shape: &[usize]) -> Self {
        match *shape {
            [r, c] if r > 1 && c > 1 => Self::Factored {
                row: vec![0.0; r],
                col: vec![0.0; c],
            },
            _ => Self::Full(vec![0.0; shape.iter().product()]),
        }
    }

    /// Named vectors for serialization.
    pub fn slots(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            Self::Factored { row, col } => vec![("row", row), ("col", col)],
            Self::Full(v) => vec![("full", v)],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub config: AdafactorConfig,
    pub moments: BTreeMap<String, SecondMoment>,
}

impl OptimizerState {
    pub fn new(config: AdafactorConfig) -> Self {
        Self {
            step: 0,
            config,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update. Nothing changes if any gradient is non-finite or
    /// mismatched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(name, p.shape(), g.shape()));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {name} has value {} at index {i}; step rejected",
                    g.data()[i]
                )));
            }
            if let Some(m) = self.moments.get(name) {
                if !shape_matches(m, g.shape()) {
                    return Err(Error::Contract(format!(
                        "optimizer state for {name} has the wrong shape"
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let beta2 = 1.0 - t.powf(-self.config.decay_exponent);
        let eps1 = self.config.eps1;
        for (name, g) in grads {
            let g = g.data();
            let p = params.get_mut(name).expect("checked above");
            let shape = p.shape().to_vec();
            let moment = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| SecondMoment::for_shape(&shape));
            let mut update: Vec<f64> = match moment {
                SecondMoment::Factored { row, col } => {
                    let (r, c) = (row.len(), col.len());
                    let mut row_mean = vec![0.0; r];
                    let mut col_mean = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            let sq = g[i * c + j] * g[i * c + j] + eps1;
                            row_mean[i] += sq / c as f64;
                            col_mean[j] += sq / r as f64;
                        }
                    }
                    ema(row, &row_mean, beta2);
                    ema(col, &col_mean, beta2);
                    let mean_row = row.iter().sum::<f64>() / r as f64;
                    (0..r * c)
                        .map(|ij| g[ij] / (row[ij / c] * col[ij % c] / mean_row).sqrt())
                        .collect()
                }
                SecondMoment::Full(v) => {
                    let sq: Vec<f64> = g.iter().map(|x| x * x + eps1).collect();
                    ema(v, &sq, beta2);
                    g.iter().zip(v.iter()).map(|(x, v)| x / v.sqrt()).collect()
                }
            };
            let rms = (update.iter().map(|u| u * u).sum::<f64>() / update.len() as f64).sqrt();
            let denom = (rms / self.config.clip_threshold).max(1.0);
            update.iter_mut().for_each(|u| *u /= denom);
            for (w, u) in p.data_mut().iter_mut().zip(&update) {
                *w -= lr * u;
            }
        }
        Ok(())
    }
}

fn shape_matches(m: &SecondMoment, shape: &[usize]) -> bool {
    match (m, shape) {
        (SecondMoment::Factored { row, col }, [r, c]) => row.len() == *r && col.len() == *c,
        (SecondMoment::Full(v), _) => v.len() == shape.iter().product::<usize>(),
        _ => false,
    }
}

fn ema(acc: &mut [f64], new: &[f64], beta2: f64) {
    for (a, n) in acc.iter_mut().zip(new) {
        *a = beta2 * *a + (1.0 - beta2) * n;
    }
}
