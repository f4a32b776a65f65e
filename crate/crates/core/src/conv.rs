//! Depthwise, lightweight and dynamic convolutions over `[n×d]` sequences.
//!
//! All three share one tap geometry. For a window of width `k` the taps of
//! output position `i` read input positions `i + offset_j`, where with
//! [`Padding::Same`]
//!
//! ```text
//! offset_j = (j - ceil((k + 1) / 2)) * dilation,   j = 1..=k
//! ```
//!
//! so `k = 3` covers `{i-1, i, i+1}` and an even `k = 4` covers
//! `{i-2, i-1, i, i+1}`. [`Padding::Causal`] shifts the window so its last tap
//! sits on `i`. Taps that fall outside the sequence read zero.
//!
//! * depthwise: channel `c` has its own row `W[c, :]`;
//! * lightweight: `H` rows shared by contiguous groups of `d / H` channels
//!   (channel `c` uses row `c * H / d`), each row softmax-normalized;
//! * dynamic: like lightweight, but the `H×k` kernel used at position `i` is
//!   generated from `X[i, :]` by a linear map and normalized per row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConvVariant;
use crate::tensor::{Backward, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Centered window with zeros past both ends (encoder).
    Same,
    /// Window ending at the current position, zeros on the left (decoder).
    Causal,
}

/// Input offsets read by each of the `k` taps.
pub fn tap_offsets(k: usize, dilation: usize, padding: Padding) -> Vec<isize> {
    let dil = dilation as isize;
    let k = k as isize;
    // ceil((k + 1) / 2) == k / 2 + 1 in integer arithmetic; j runs over 1..=k.
    let anchor = match padding {
        Padding::Same => k / 2 + 1,
        Padding::Causal => k,
    };
    (1..=k).map(|j| (j - anchor) * dil).collect()
}

/// Index of the tap that reads the current position.
pub fn identity_tap(k: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => k / 2,
        Padding::Causal => k - 1,
    }
}

/// Row of a tied `H`-row kernel used by channel `c` of a `d`-channel layer.
pub fn tied_row(c: usize, heads: usize, d: usize) -> usize {
    c * heads / d
}

fn tap_source(i: usize, offset: isize, n: usize) -> Option<usize> {
    let src = i as isize + offset;
    (0..n as isize).contains(&src).then_some(src as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseKernel {
    /// `[d×k]`, one row per channel.
    pub weights: Tensor,
    pub dilation: usize,
}

impl DepthwiseKernel {
    pub fn new(weights: Tensor, dilation: usize) -> Result<Self> {
        if weights.rank() != 2 || dilation == 0 {
            return Err(Error::Contract(format!(
                "depthwise kernel needs [d×k] weights and dilation >= 1, got {:?} and {dilation}",
                weights.shape()
            )));
        }
        Ok(Self { weights, dilation })
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// `H` kernel rows shared across channel groups.
#[derive(Clone, Debug, PartialEq)]
pub struct TiedKernel {
    /// `[H×k]` unnormalized logits.
    pub weights: Tensor,
}

impl TiedKernel {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::Contract(format!(
                "tied kernel needs [H×k] weights, got {:?}",
                weights.shape()
            )));
        }
        Ok(Self { weights })
    }

    pub fn heads(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Softmax over the taps of every row.
    pub fn normalized(&self) -> Tensor {
        let mut w = self.weights.clone();
        let shape = w.shape().to_vec();
        crate::tensor::softmax_in_place(w.data_mut(), &shape, 1);
        w
    }

    /// Per-channel `[d×k]` kernel after normalization and tying.
    pub fn effective(&self, d: usize) -> Result<Tensor> {
        check_tying(self.heads(), d)?;
        let norm = self.normalized();
        let data = (0..d)
            .flat_map(|c| norm.row(tied_row(c, self.heads(), d)).to_vec())
            .collect();
        Tensor::new([d, self.width()], data)
    }
}

/// Linear map from a position's input vector to its `H×k` kernel logits.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicKernelGenerator {
    /// `[d × (H·k)]`; column `h·k + j` produces tap `j` of row `h`.
    pub projection: Tensor,
    pub heads: usize,
    pub width: usize,
}

impl DynamicKernelGenerator {
    pub fn new(projection: Tensor, heads: usize, width: usize) -> Result<Self> {
        if projection.rank() != 2 || projection.shape()[1] != heads * width {
            return Err(Error::Contract(format!(
                "kernel generator for H={heads}, k={width} needs [d×{}] weights, got {:?}",
                heads * width,
                projection.shape()
            )));
        }
        check_tying(heads, projection.shape()[0])?;
        Ok(Self {
            projection,
            heads,
            width,
        })
    }

    /// Normalized kernels for every position, `[n × (H·k)]`.
    pub fn kernels(&self, x: &Tensor) -> Result<Tensor> {
        let logits = x.matmul(&self.projection)?;
        let n = logits.rows();
        let mut data = logits.into_data();
        crate::tensor::softmax_in_place(&mut data, &[n * self.heads, self.width], 1);
        Tensor::new([n, self.heads * self.width], data)
    }
}

fn check_tying(heads: usize, d: usize) -> Result<()> {
    if heads == 0 || d % heads != 0 {
        return Err(Error::Contract(format!(
            "tying factor H={heads} must divide the channel count d={d}"
        )));
    }
    Ok(())
}

fn check_sequence(x: &Tensor, d: usize, what: &str) -> Result<usize> {
    if x.rank() != 2 {
        return Err(Error::Contract(format!(
            "{what} expects an [n×d] sequence, got {:?}",
            x.shape()
        )));
    }
    if x.last_dim() != d {
        return Err(Error::shape("convolution channels", x.shape(), &[d]));
    }
    Ok(x.rows())
}

struct DepthwiseConv {
    offsets: Vec<isize>,
}

impl DepthwiseConv {
    fn forward(&self, x: &Tensor, w: &Tensor) -> Tensor {
        let (n, d) = (x.rows(), x.last_dim());
        let k = self.offsets.len();
        let (xd, wd) = (x.data(), w.data());
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for (j, &off) in self.offsets.iter().enumerate() {
                let Some(src) = tap_source(i, off, n) else { continue };
                let (o, xs) = (&mut out[i * d..(i + 1) * d], &xd[src * d..(src + 1) * d]);
                for c in 0..d {
                    o[c] += wd[c * k + j] * xs[c];
                }
            }
        }
        Tensor::new([n, d], out).expect("conv output")
    }
}

impl Backward for DepthwiseConv {
    fn name(&self) -> &'static str {
        "depthwise_conv"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, d) = (x.rows(), x.last_dim());
        let k = self.offsets.len();
        let (xd, wd) = (x.data(), w.data());
        let mut dx = vec![0.0; n * d];
        let mut dw = vec![0.0; d * k];
        for i in 0..n {
            for (j, &off) in self.offsets.iter().enumerate() {
                let Some(src) = tap_source(i, off, n) else { continue };
                for c in 0..d {
                    let g = grad[i * d + c];
                    dx[src * d + c] += g * wd[c * k + j];
                    dw[c * k + j] += g * xd[src * d + c];
                }
            }
        }
        vec![Some(dx), Some(dw)]
    }
}

/// Depthwise convolution: `O[i,c] = Σ_j W[c,j] · X[i + offset_j, c]`.
pub fn depthwise_conv<'g>(x: Var<'g>, w: Var<'g>, padding: Padding, dilation: usize) -> Result<Var<'g>> {
    let (xv, wv) = (x.value_rc(), w.value_rc());
    if wv.rank() != 2 {
        return Err(Error::Contract(format!(
            "depthwise kernel must be [d×k], got {:?}",
            wv.shape()
        )));
    }
    if dilation == 0 {
        return Err(Error::Contract("dilation must be at least 1".into()));
    }
    check_sequence(&xv, wv.shape()[0], "depthwise_conv")?;
    let op = DepthwiseConv {
        offsets: tap_offsets(wv.shape()[1], dilation, padding),
    };
    let out = op.forward(&xv, &wv);
    Ok(x.graph().apply(Box::new(op), &[x, w], out))
}

/// Lightweight convolution with an `[H×k]` tied kernel of unnormalized logits.
pub fn lightweight_conv<'g>(x: Var<'g>, kernel: Var<'g>, padding: Padding, dilation: usize) -> Result<Var<'g>> {
    let ks = kernel.shape();
    if ks.len() != 2 {
        return Err(Error::Contract(format!("tied kernel must be [H×k], got {ks:?}")));
    }
    let d = *x.shape().last().unwrap_or(&0);
    check_tying(ks[0], d)?;
    let rows: Vec<usize> = (0..d).map(|c| tied_row(c, ks[0], d)).collect();
    let per_channel = kernel.softmax(1)?.gather_rows(&rows)?;
    depthwise_conv(x, per_channel, padding, dilation)
}

struct PositionalConv {
    offsets: Vec<isize>,
    heads: usize,
}

impl PositionalConv {
    fn forward(&self, x: &Tensor, kern: &Tensor) -> Tensor {
        let (n, d) = (x.rows(), x.last_dim());
        let k = self.offsets.len();
        let (xd, kd) = (x.data(), kern.data());
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let ki = &kd[i * self.heads * k..(i + 1) * self.heads * k];
            for (j, &off) in self.offsets.iter().enumerate() {
                let Some(src) = tap_source(i, off, n) else { continue };
                for c in 0..d {
                    out[i * d + c] += ki[tied_row(c, self.heads, d) * k + j] * xd[src * d + c];
                }
            }
        }
        Tensor::new([n, d], out).expect("conv output")
    }
}

impl Backward for PositionalConv {
    fn name(&self) -> &'static str {
        "dynamic_conv"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, kern) = (inputs[0], inputs[1]);
        let (n, d) = (x.rows(), x.last_dim());
        let k = self.offsets.len();
        let hk = self.heads * k;
        let (xd, kd) = (x.data(), kern.data());
        let mut dx = vec![0.0; n * d];
        let mut dk = vec![0.0; n * hk];
        for i in 0..n {
            for (j, &off) in self.offsets.iter().enumerate() {
                let Some(src) = tap_source(i, off, n) else { continue };
                for c in 0..d {
                    let t = i * hk + tied_row(c, self.heads, d) * k + j;
                    let g = grad[i * d + c];
                    dx[src * d + c] += g * kd[t];
                    dk[t] += g * xd[src * d + c];
                }
            }
        }
        vec![Some(dx), Some(dk)]
    }
}

/// Dynamic convolution. `projection` is `[d × (H·k)]`; position `i` convolves
/// with `softmax(reshape(X[i,:] · projection, [H, k]))`.
pub fn dynamic_conv<'g>(
    x: Var<'g>,
    projection: Var<'g>,
    heads: usize,
    k: usize,
    padding: Padding,
    dilation: usize,
) -> Result<Var<'g>> {
    let xs = x.shape();
    let ps = projection.shape();
    if ps.len() != 2 || ps[1] != heads * k || xs.len() != 2 || xs[1] != ps[0] {
        return Err(Error::shape("dynamic_conv", &xs, &ps));
    }
    if dilation == 0 || k == 0 {
        return Err(Error::Contract("dynamic_conv needs k >= 1 and dilation >= 1".into()));
    }
    check_tying(heads, xs[1])?;
    let n = xs[0];
    let kernels = x
        .matmul(projection)?
        .reshape([n * heads, k])?
        .softmax(1)?
        .reshape([n, heads * k])?;
    let op = PositionalConv {
        offsets: tap_offsets(k, dilation, padding),
        heads,
    };
    let out = op.forward(&x.value(), &kernels.value());
    Ok(x.graph().apply(Box::new(op), &[x, kernels], out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerScheduleEntry {
    pub layer: usize,
    pub width: usize,
    pub dilation: usize,
}

/// Window width used by every layer of the lightweight and dynamic variants.
pub const UNIFORM_WINDOW: usize = 7;

/// Per-layer filter widths of the dilated variant.
pub const DILATED_WIDTHS: [usize; 11] = [4, 4, 7, 7, 15, 15, 15, 15, 31, 31, 31];

/// Per-layer kernel widths for a conv variant. Models deeper than the dilated
/// width list repeat its last entry.
pub fn make_layer_schedule(variant: ConvVariant, num_layers: usize) -> Result<Vec<LayerScheduleEntry>> {
    if num_layers == 0 {
        return Err(Error::Config("a schedule needs at least one layer".into()));
    }
    let width = |layer: usize| match variant {
        ConvVariant::Light | ConvVariant::Dynamic => Ok(UNIFORM_WINDOW),
        ConvVariant::Dilated => Ok(DILATED_WIDTHS[layer.min(DILATED_WIDTHS.len() - 1)]),
        ConvVariant::Transformer => Err(Error::Config(
            "the transformer baseline has no convolution schedule".into(),
        )),
    };
    (0..num_layers)
        .map(|layer| {
            Ok(LayerScheduleEntry {
                layer,
                width: width(layer)?,
                dilation: 1,
            })
        })
        .collect()
}
