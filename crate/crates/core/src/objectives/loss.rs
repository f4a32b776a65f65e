use crate::error::{Error, Result};
use crate::tensor::{Backward, Tensor, Var};

use super::vocab::PAD_ID;

/// `true` at every non-pad position.
pub fn pad_mask(targets: &[u32]) -> Vec<bool> {
    targets.iter().map(|&t| t != PAD_ID).collect()
}

struct SeqCrossEntropy {
    targets: Vec<usize>,
    mask: Vec<bool>,
    count: f64,
    /// Row-wise softmax of the logits, kept for the backward pass.
    probs: Vec<f64>,
}

impl Backward for SeqCrossEntropy {
    fn name(&self) -> &'static str {
        "seq_cross_entropy"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let v = inputs[0].last_dim();
        let scale = grad[0] / self.count;
        let mut d = vec![0.0; self.probs.len()];
        for (t, (&target, &keep)) in self.targets.iter().zip(&self.mask).enumerate() {
            if !keep {
                continue;
            }
            let row = &mut d[t * v..(t + 1) * v];
            for (r, p) in row.iter_mut().zip(&self.probs[t * v..(t + 1) * v]) {
                *r = p * scale;
            }
            row[target] -= scale;
        }
        vec![Some(d)]
    }
}

/// Mean over unmasked positions of `-log softmax(logits[t])[targets[t]]`.
pub fn seq_cross_entropy<'g>(logits: Var<'g>, targets: &[u32], mask: &[bool]) -> Result<Var<'g>> {
    let value = logits.value_rc();
    if value.rank() != 2 || value.rows() != targets.len() || mask.len() != targets.len() {
        return Err(Error::shape(
            "seq_cross_entropy",
            value.shape(),
            &[targets.len(), mask.len()],
        ));
    }
    let v = value.last_dim();
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= v) {
        return Err(Error::Contract(format!("target id {bad} outside a vocabulary of {v}")));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Contract(
            "cross-entropy mean over an all-pad target is undefined".into(),
        ));
    }
    let mut probs = value.data().to_vec();
    crate::tensor::softmax_in_place(&mut probs, value.shape(), 1);
    let mut total = 0.0;
    for (t, (&target, &keep)) in targets.iter().zip(mask).enumerate() {
        if !keep {
            continue;
        }
        let row = value.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[target as usize];
    }
    let op = SeqCrossEntropy {
        targets: targets.iter().map(|&t| t as usize).collect(),
        mask: mask.to_vec(),
        count: count as f64,
        probs,
    };
    let out = Tensor::scalar(total / count as f64);
    Ok(logits.graph().apply(Box::new(op), &[logits], out))
}
