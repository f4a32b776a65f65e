//! Scaled dot-product multi-head attention.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Projections of one attention sublayer, each `[d×d]`. Head `h` owns columns
/// `h·d_head .. (h+1)·d_head` of the query, key and value projections.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars<'g> {
    pub q: Var<'g>,
    pub k: Var<'g>,
    pub v: Var<'g>,
    pub o: Var<'g>,
}

/// `[n×n]` additive mask that hides keys after each query.
pub fn causal_mask(g: &Graph, n: usize) -> Var<'_> {
    g.constant(causal_mask_tensor(n))
}

pub fn causal_mask_tensor(n: usize) -> Tensor {
    let data = (0..n * n)
        .map(|ij| if ij % n > ij / n { f64::NEG_INFINITY } else { 0.0 })
        .collect();
    Tensor::new([n, n], data).expect("mask shape")
}

/// `softmax(Q Kᵀ / √d_head + mask) V` per head, heads concatenated and
/// projected by `o`. Queries come from `xq`, keys and values from `xkv`.
pub fn multi_head_attention<'g>(
    xq: Var<'g>,
    xkv: Var<'g>,
    p: &AttentionVars<'g>,
    heads: usize,
    mask: Option<Var<'g>>,
) -> Result<Var<'g>> {
    let (qs, ks) = (xq.shape(), xkv.shape());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::shape("attention inputs", &qs, &ks));
    }
    let d = qs[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::Contract(format!("{heads} heads do not divide width {d}")));
    }
    if let Some(m) = mask {
        if m.shape() != [qs[0], ks[0]] {
            return Err(Error::shape("attention mask", &m.shape(), &[qs[0], ks[0]]));
        }
    }
    let dh = d / heads;
    let q = xq.matmul(p.q)?;
    let k = xkv.matmul(p.k)?;
    let v = xkv.matmul(p.v)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (
            q.slice_cols(h * dh, dh)?,
            k.slice_cols(h * dh, dh)?,
            v.slice_cols(h * dh, dh)?,
        );
        let mut scores = qh.matmul(kh.transpose()?)?.scale(scale);
        if let Some(m) = mask {
            scores = scores.add(m)?;
        }
        outs.push(scores.softmax(1)?.matmul(vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { Var::concat_cols(&outs)? };
    joined.matmul(p.o)
}
