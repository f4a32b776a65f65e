//! Sublayers shared by the encoder and decoder stacks.

use crate::conv::{self, Padding};
use crate::error::{Error, Result};
use crate::tensor::Var;

/// Epsilon of every layer normalization in the model.
pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub enum ConvVars<'g> {
    /// `[d×k]` per-channel kernel.
    Depthwise { kernel: Var<'g>, dilation: usize },
    /// `[H×k]` tied kernel logits.
    Lightweight { kernel: Var<'g>, dilation: usize },
    /// `[d × (H·k)]` kernel generator.
    Dynamic {
        w_query: Var<'g>,
        heads: usize,
        k: usize,
        dilation: usize,
    },
}

impl<'g> ConvVars<'g> {
    pub fn apply(&self, x: Var<'g>, padding: Padding) -> Result<Var<'g>> {
        match *self {
            Self::Depthwise { kernel, dilation } => conv::depthwise_conv(x, kernel, padding, dilation),
            Self::Lightweight { kernel, dilation } => conv::lightweight_conv(x, kernel, padding, dilation),
            Self::Dynamic {
                w_query,
                heads,
                k,
                dilation,
            } => conv::dynamic_conv(x, w_query, heads, k, padding, dilation),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvBlockVars<'g> {
    pub w_in: Var<'g>,
    pub w_gate: Var<'g>,
    pub w_out: Var<'g>,
    pub conv: ConvVars<'g>,
}

/// `((X·W_I) ⊙ σ(X·W_S))`, convolved, then projected by `W_O`.
pub fn glu_conv_block<'g>(x: Var<'g>, p: &ConvBlockVars<'g>, padding: Padding) -> Result<Var<'g>> {
    let gated = x.matmul(p.w_in)?.mul(x.matmul(p.w_gate)?.sigmoid())?;
    p.conv.apply(gated, padding)?.matmul(p.w_out)
}

#[derive(Clone, Copy, Debug)]
pub struct FfnVars<'g> {
    pub w1: Var<'g>,
    pub b1: Var<'g>,
    pub w2: Var<'g>,
    pub b2: Var<'g>,
}

pub fn ffn<'g>(x: Var<'g>, p: &FfnVars<'g>) -> Result<Var<'g>> {
    x.matmul(p.w1)?.add_row(p.b1)?.relu().matmul(p.w2)?.add_row(p.b2)
}

#[derive(Clone, Copy, Debug)]
pub struct NormVars<'g> {
    pub gamma: Var<'g>,
    pub beta: Var<'g>,
}

/// `LayerNorm(sub(X)) + X`.
pub fn sublayer_wrap<'g>(
    x: Var<'g>,
    norm: &NormVars<'g>,
    sub: impl FnOnce(Var<'g>) -> Result<Var<'g>>,
) -> Result<Var<'g>> {
    let y = sub(x)?;
    if y.shape() != x.shape() {
        return Err(Error::Contract(format!(
            "sublayer changed shape {:?} to {:?}",
            x.shape(),
            y.shape()
        )));
    }
    y.layer_norm(norm.gamma, norm.beta, LN_EPS)?.add(x)
}
