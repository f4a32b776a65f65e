//! Central finite-difference checks of analytic gradients.
//!
//! The numeric side only ever evaluates the forward pass on constant leaves,
//! so it shares no code with any `Backward` implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{self, Padding};
use crate::error::Result;
use crate::model::{attention, layers, ConvVariant, Model, ModelConfig};
use crate::objectives::loss::seq_cross_entropy;
use crate::tensor::{Graph, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. Gradient components smaller than
/// this are compared on an absolute scale, where finite-difference rounding
/// noise (about 1e-10 for O(1) losses) would otherwise dominate.
pub const DENOM_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Largest relative error between analytic and central-difference gradients
/// of the scalar `f` with respect to every element of every input.
pub fn max_relative_error<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + STEP;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - STEP;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Contracts `out` with fixed pseudo-random weights so every output element
/// contributes a distinct amount to the scalar being differentiated.
pub fn probe_loss<'g>(out: Var<'g>, seed: u64) -> Result<Var<'g>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, &out.shape());
    out.mul(out.graph().constant(w)).map(Var::sum)
}

fn check<F>(name: &str, f: F, inputs: &[Tensor]) -> Result<CheckResult>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error: max_relative_error(f, inputs)?,
    })
}

/// Every differentiable operation on small random inputs.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: &[usize]| random_tensor(&mut rng, s);
    let mut out = Vec::new();

    out.push(check(
        "matmul",
        |_, v| probe_loss(v[0].matmul(v[1])?, 1),
        &[r(&[3, 4]), r(&[4, 5])],
    )?);
    out.push(check(
        "transpose",
        |_, v| probe_loss(v[0].transpose()?, 2),
        &[r(&[3, 5])],
    )?);
    out.push(check(
        "add",
        |_, v| probe_loss(v[0].add(v[1])?, 3),
        &[r(&[2, 3]), r(&[2, 3])],
    )?);
    out.push(check(
        "add_row",
        |_, v| probe_loss(v[0].add_row(v[1])?, 4),
        &[r(&[4, 3]), r(&[3])],
    )?);
    out.push(check(
        "mul",
        |_, v| probe_loss(v[0].mul(v[1])?, 5),
        &[r(&[3, 3]), r(&[3, 3])],
    )?);
    out.push(check("scale", |_, v| probe_loss(v[0].scale(-1.7), 6), &[r(&[5])])?);
    out.push(check("sigmoid", |_, v| probe_loss(v[0].sigmoid(), 7), &[r(&[2, 6])])?);
    out.push(check("relu", |_, v| probe_loss(v[0].relu(), 8), &[r(&[6, 2])])?);
    out.push(check("softmax", |_, v| probe_loss(v[0].softmax(1)?, 9), &[r(&[3, 5])])?);
    out.push(check(
        "softmax_axis0",
        |_, v| probe_loss(v[0].softmax(0)?, 10),
        &[r(&[4, 3])],
    )?);
    out.push(check(
        "layer_norm",
        |_, v| probe_loss(v[0].layer_norm(v[1], v[2], 1e-5)?, 11),
        &[r(&[3, 6]), r(&[6]), r(&[6])],
    )?);
    out.push(check("sum", |_, v| Ok(v[0].sum()), &[r(&[2, 2])])?);
    out.push(check("mean", |_, v| probe_loss(v[0].mean(), 12), &[r(&[5])])?);
    out.push(check(
        "reshape",
        |_, v| probe_loss(v[0].reshape([6, 2])?, 13),
        &[r(&[3, 4])],
    )?);
    out.push(check(
        "gather_rows",
        |_, v| probe_loss(v[0].gather_rows(&[2, 0, 2, 1])?, 14),
        &[r(&[4, 3])],
    )?);
    out.push(check(
        "slice_concat",
        |_, v| {
            let a = v[0].slice_cols(1, 2)?;
            probe_loss(Var::concat_cols(&[a, v[1], v[0]])?, 15)
        },
        &[r(&[3, 4]), r(&[3, 2])],
    )?);
    out.push(check(
        "seq_cross_entropy",
        |_, v| seq_cross_entropy(v[0], &[3, 0, 5, 1], &[true, false, true, true]),
        &[r(&[4, 6])],
    )?);

    for (name, padding, dilation) in [
        ("depthwise_conv_same", Padding::Same, 1),
        ("depthwise_conv_causal", Padding::Causal, 1),
        ("depthwise_conv_dilated", Padding::Same, 2),
    ] {
        out.push(check(
            name,
            move |_, v| probe_loss(conv::depthwise_conv(v[0], v[1], padding, dilation)?, 16),
            &[r(&[6, 3]), r(&[3, 4])],
        )?);
    }
    for padding in [Padding::Same, Padding::Causal] {
        out.push(check(
            &format!("lightweight_conv_{padding:?}").to_lowercase(),
            move |_, v| probe_loss(conv::lightweight_conv(v[0], v[1], padding, 1)?, 17),
            &[r(&[5, 4]), r(&[2, 3])],
        )?);
        out.push(check(
            &format!("dynamic_conv_{padding:?}").to_lowercase(),
            move |_, v| probe_loss(conv::dynamic_conv(v[0], v[1], 2, 3, padding, 1)?, 18),
            &[r(&[5, 4]), r(&[4, 6])],
        )?);
    }
    out.push(check(
        "multi_head_attention_causal",
        |g, v| {
            let mask = attention::causal_mask(g, 4);
            let p = attention::AttentionVars {
                q: v[1],
                k: v[2],
                v: v[3],
                o: v[4],
            };
            probe_loss(attention::multi_head_attention(v[0], v[0], &p, 2, Some(mask))?, 19)
        },
        &[r(&[4, 4]), r(&[4, 4]), r(&[4, 4]), r(&[4, 4]), r(&[4, 4])],
    )?);
    out.push(check(
        "glu_conv_block",
        |_, v| {
            let block = layers::ConvBlockVars {
                w_in: v[1],
                w_gate: v[2],
                w_out: v[3],
                conv: layers::ConvVars::Lightweight {
                    kernel: v[4],
                    dilation: 1,
                },
            };
            probe_loss(layers::glu_conv_block(v[0], &block, Padding::Same)?, 20)
        },
        &[r(&[5, 4]), r(&[4, 4]), r(&[4, 4]), r(&[4, 4]), r(&[2, 3])],
    )?);
    out.push(check(
        "ffn",
        |_, v| {
            let p = layers::FfnVars {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            probe_loss(layers::ffn(v[0], &p)?, 21)
        },
        &[r(&[3, 4]), r(&[4, 6]), r(&[6]), r(&[6, 4]), r(&[4])],
    )?);
    Ok(out)
}

/// Configuration of the miniature model used for end-to-end gradient checks.
pub fn miniature_config(variant: ConvVariant) -> ModelConfig {
    let mut cfg = ModelConfig::mini(variant);
    cfg.vocab_size = 11;
    cfg
}

/// End-to-end check of the token-level loss with respect to every model parameter.
pub fn model_check(cfg: &ModelConfig, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(cfg.clone())?;
    // Fresh models start with zero kernels and unit norms; randomize everything
    // so no gradient path is trivially zero.
    for t in model.params_mut().values_mut() {
        *t = random_tensor(&mut rng, t.shape());
    }
    let v = cfg.vocab_size as u32;
    let src: Vec<u32> = (0..5).map(|_| rng.gen_range(1..v)).collect();
    let tgt: Vec<u32> = (0..4).map(|_| rng.gen_range(1..v)).collect();
    let names: Vec<String> = model.params().keys().cloned().collect();
    let inputs: Vec<Tensor> = model.params().values().cloned().collect();
    let name = format!(
        "model_{}{}",
        cfg.variant.name(),
        if cfg.encoder_cross_attention { "+xattn" } else { "" }
    );
    let max_rel_error = max_relative_error(
        |g, vars| {
            let bound = model.bind_vars(g, names.iter().cloned().zip(vars.iter().copied()).collect());
            let logits = bound.forward(&src, &tgt)?;
            seq_cross_entropy(logits, &tgt, &[true; 4])
        },
        &inputs,
    )?;
    Ok(CheckResult { name, max_rel_error })
}

/// Every op plus the miniature model for all four variants, and the
/// encoder cross-attention augmentation.
pub fn full_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = op_suite(seed)?;
    for variant in ConvVariant::ALL {
        out.push(model_check(&miniature_config(variant), seed)?);
    }
    let mut xattn = miniature_config(ConvVariant::Light);
    xattn.encoder_cross_attention = true;
    out.push(model_check(&xattn, seed)?);
    Ok(out)
}
