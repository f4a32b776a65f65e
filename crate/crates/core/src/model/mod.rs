//! Encoder-decoder models with convolutional or self-attention sublayers.
//!
//! Every sublayer is wrapped as `LayerNorm(sub(X)) + X`. An encoder layer is
//! `{token mixer, FFN}` and a decoder layer is `{causal token mixer,
//! encoder-decoder attention, FFN}`, where the token mixer is a GLU conv block
//! for the conv variants and self-attention for the transformer baseline.
//! Logits are `LayerNorm(decoder output) · Eᵀ` with `E` the shared embedding.
//!
//! Parameters live in a name-keyed map. Names follow the stack layout, e.g.
//! `encoder.layers.3.conv.w_in`, `decoder.layers.0.cross_attn.w_q`,
//! `decoder.layers.1.ffn_norm.gamma`; [`parameter_layout`] lists all of them.

pub mod attention;
mod config;
pub mod layers;

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{enable_encoder_cross_attention, ConvVariant, ModelConfig};

use crate::conv::{LayerScheduleEntry, Padding};
use crate::error::{Error, Result};
use crate::objectives::vocab::{EOS_ID, PAD_ID};
use crate::tensor::{Graph, Tensor, Var};
use attention::AttentionVars;
use layers::{ConvBlockVars, ConvVars, FfnVars, NormVars};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Every parameter a model with this config owns, in initialization order.
pub fn parameter_layout(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let (d, dff) = (cfg.d_model, cfg.d_ff);
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init| out.push(ParamSpec { name, shape, init });
    let fan_in = |n: usize| Init::Uniform(1.0 / (n as f64).sqrt());

    push("shared.embedding".into(), vec![cfg.vocab_size, d], fan_in(d));
    let schedule = if cfg.variant.is_conv() {
        cfg.layer_schedule()?
    } else {
        Vec::new()
    };
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        push(format!("{prefix}.gamma"), vec![d], Init::Ones);
        push(format!("{prefix}.beta"), vec![d], Init::Zeros);
    };
    let attn = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        for w in ["w_q", "w_k", "w_v", "w_o"] {
            push(format!("{prefix}.{w}"), vec![d, d], fan_in(d));
        }
    };
    for side in ["encoder", "decoder"] {
        for i in 0..cfg.num_layers {
            let p = format!("{side}.layers.{i}");
            if cfg.variant.is_conv() {
                for w in ["w_in", "w_gate", "w_out"] {
                    push(format!("{p}.conv.{w}"), vec![d, d], fan_in(d));
                }
                let (h, k) = (cfg.tying_heads, schedule[i].width);
                match cfg.variant {
                    ConvVariant::Dynamic => push(format!("{p}.conv.w_query"), vec![d, h * k], Init::Zeros),
                    _ => push(format!("{p}.conv.kernel"), vec![h, k], Init::Zeros),
                }
                norm(&mut push, &format!("{p}.conv_norm"));
            } else {
                attn(&mut push, &format!("{p}.self_attn"));
                norm(&mut push, &format!("{p}.self_attn_norm"));
            }
            if side == "decoder" {
                attn(&mut push, &format!("{p}.cross_attn"));
                norm(&mut push, &format!("{p}.cross_attn_norm"));
            }
            push(format!("{p}.ffn.w1"), vec![d, dff], fan_in(d));
            push(format!("{p}.ffn.b1"), vec![dff], Init::Zeros);
            push(format!("{p}.ffn.w2"), vec![dff, d], fan_in(dff));
            push(format!("{p}.ffn.b2"), vec![d], Init::Zeros);
            norm(&mut push, &format!("{p}.ffn_norm"));
        }
        if side == "encoder" && cfg.has_encoder_cross_attention() {
            attn(&mut push, "encoder.segment_attn");
            norm(&mut push, "encoder.segment_attn_norm");
        }
    }
    norm(&mut push, "decoder.final_norm");
    Ok(out)
}

/// Fixed sine/cosine position table `[n×d]` used by the transformer baseline.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros([n, d]);
    for pos in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((i - i % 2) as f64 / d as f64);
            let angle = pos as f64 * freq;
            t.data_mut()[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionalEncoding {
    None,
    /// Added to token embeddings; a fixed table, not a parameter.
    Sinusoidal,
}

/// Parameter and sublayer counts derived from a config alone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub total: usize,
    pub embedding: usize,
    pub encoder: usize,
    pub decoder: usize,
    pub encoder_conv_sublayers: usize,
    pub encoder_attention_sublayers: usize,
    pub decoder_conv_sublayers: usize,
    pub decoder_attention_sublayers: usize,
    pub positional_encoding: PositionalEncoding,
    pub positional_parameters: usize,
}

pub fn census(cfg: &ModelConfig) -> Result<Census> {
    let layout = parameter_layout(cfg)?;
    let size = |prefix: &str| -> usize {
        layout
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    };
    let count = |side: &str, part: &str| {
        layout
            .iter()
            .filter(|p| p.name.starts_with(side) && p.name.ends_with(part))
            .count()
    };
    let conv = cfg.variant.is_conv();
    Ok(Census {
        total: size(""),
        embedding: size("shared."),
        encoder: size("encoder."),
        decoder: size("decoder."),
        encoder_conv_sublayers: count("encoder.", ".conv.w_in"),
        encoder_attention_sublayers: count("encoder.", ".w_q"),
        decoder_conv_sublayers: count("decoder.", ".conv.w_in"),
        decoder_attention_sublayers: count("decoder.", ".w_q"),
        positional_encoding: if conv {
            PositionalEncoding::None
        } else {
            PositionalEncoding::Sinusoidal
        },
        positional_parameters: layout.iter().filter(|p| p.name.contains("position")).count(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

impl Model {
    /// Freshly initialized model, seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = parameter_layout(&config)?
            .into_iter()
            .map(|p| {
                let len = p.shape.iter().product();
                let data = match p.init {
                    Init::Uniform(b) => (0..len).map(|_| rng.gen_range(-b..=b)).collect(),
                    Init::Zeros => vec![0.0; len],
                    Init::Ones => vec![1.0; len],
                };
                Ok((p.name, Tensor::new(p.shape, data)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, params })
    }

    /// Model over existing parameters, which must match the config's layout.
    pub fn from_params(config: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        let layout = parameter_layout(&config)?;
        if layout.len() != params.len() {
            return Err(Error::Contract(format!(
                "config expects {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        for spec in &layout {
            match params.get(&spec.name) {
                Some(t) if t.shape() == spec.shape.as_slice() => {}
                Some(t) => return Err(Error::shape(&spec.name, t.shape(), &spec.shape)),
                None => return Err(Error::Contract(format!("missing parameter {}", spec.name))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Binds every parameter as a trainable leaf of `g`.
    pub fn bind<'g>(&self, g: &'g Graph) -> BoundModel<'_, 'g> {
        let vars = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), g.param(t.clone())))
            .collect();
        self.bind_vars(g, vars)
    }

    /// Binds every parameter as a constant, for inference.
    pub fn bind_frozen<'g>(&self, g: &'g Graph) -> BoundModel<'_, 'g> {
        let vars = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), g.constant(t.clone())))
            .collect();
        self.bind_vars(g, vars)
    }

    /// Binds caller-provided variables, keyed by parameter name.
    pub fn bind_vars<'g>(&self, g: &'g Graph, vars: BTreeMap<String, Var<'g>>) -> BoundModel<'_, 'g> {
        BoundModel {
            config: &self.config,
            graph: g,
            vars,
            schedule: self.config.layer_schedule().unwrap_or_default(),
            dropout: None,
        }
    }

    /// Teacher-forced logits `[m×vocab]` for target `tgt`.
    pub fn logits(&self, src: &[u32], tgt: &[u32]) -> Result<Tensor> {
        let g = Graph::new();
        Ok(self.bind_frozen(&g).forward(src, tgt)?.to_tensor())
    }

    /// Encoder output `[n×d]`.
    pub fn encode(&self, src: &[u32]) -> Result<Tensor> {
        let g = Graph::new();
        Ok(self.bind_frozen(&g).encode(src)?.to_tensor())
    }

    /// Greedy decoding until end-of-sequence or `max_len` tokens. The
    /// end-of-sequence token is not included in the result.
    pub fn greedy_decode(&self, src: &[u32], max_len: usize) -> Result<Vec<u32>> {
        let g = Graph::new();
        let bound = self.bind_frozen(&g);
        let encoded = bound.encode(src)?.to_tensor();
        let mut out: Vec<u32> = Vec::new();
        while out.len() < max_len.min(self.config.max_target_len) {
            let g = Graph::new();
            let bound = self.bind_frozen(&g);
            let mut dec_in = vec![PAD_ID];
            dec_in.extend_from_slice(&out);
            let logits = bound.decode(g.constant(encoded.clone()), &dec_in)?;
            let logits = logits.value();
            let last = logits.row(dec_in.len() - 1);
            let next = argmax(last) as u32;
            if next == EOS_ID {
                break;
            }
            out.push(next);
        }
        Ok(out)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Decoder input for teacher forcing: the target shifted right behind a
/// start token (the pad id).
pub fn shift_right(tgt: &[u32]) -> Vec<u32> {
    std::iter::once(PAD_ID)
        .chain(tgt.iter().copied().take(tgt.len().saturating_sub(1)))
        .collect()
}

/// A model whose parameters are variables of one graph.
pub struct BoundModel<'m, 'g> {
    config: &'m ModelConfig,
    graph: &'g Graph,
    vars: BTreeMap<String, Var<'g>>,
    schedule: Vec<LayerScheduleEntry>,
    dropout: Option<RefCell<ChaCha8Rng>>,
}

impl<'m, 'g> BoundModel<'m, 'g> {
    /// Enables dropout on sublayer outputs with masks drawn from `seed`.
    pub fn with_dropout(mut self, seed: u64) -> Self {
        if self.config.dropout > 0.0 {
            self.dropout = Some(RefCell::new(ChaCha8Rng::seed_from_u64(seed)));
        }
        self
    }

    pub fn var(&self, name: &str) -> Result<Var<'g>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &BTreeMap<String, Var<'g>> {
        &self.vars
    }

    fn norm(&self, prefix: &str) -> Result<NormVars<'g>> {
        Ok(NormVars {
            gamma: self.var(&format!("{prefix}.gamma"))?,
            beta: self.var(&format!("{prefix}.beta"))?,
        })
    }

    fn attn(&self, prefix: &str) -> Result<AttentionVars<'g>> {
        Ok(AttentionVars {
            q: self.var(&format!("{prefix}.w_q"))?,
            k: self.var(&format!("{prefix}.w_k"))?,
            v: self.var(&format!("{prefix}.w_v"))?,
            o: self.var(&format!("{prefix}.w_o"))?,
        })
    }

    fn ffn(&self, prefix: &str) -> Result<FfnVars<'g>> {
        Ok(FfnVars {
            w1: self.var(&format!("{prefix}.w1"))?,
            b1: self.var(&format!("{prefix}.b1"))?,
            w2: self.var(&format!("{prefix}.w2"))?,
            b2: self.var(&format!("{prefix}.b2"))?,
        })
    }

    fn conv_block(&self, prefix: &str, layer: usize) -> Result<ConvBlockVars<'g>> {
        let e = self.schedule[layer];
        let conv = match self.config.variant {
            ConvVariant::Dynamic => ConvVars::Dynamic {
                w_query: self.var(&format!("{prefix}.w_query"))?,
                heads: self.config.tying_heads,
                k: e.width,
                dilation: e.dilation,
            },
            _ => ConvVars::Lightweight {
                kernel: self.var(&format!("{prefix}.kernel"))?,
                dilation: e.dilation,
            },
        };
        Ok(ConvBlockVars {
            w_in: self.var(&format!("{prefix}.w_in"))?,
            w_gate: self.var(&format!("{prefix}.w_gate"))?,
            w_out: self.var(&format!("{prefix}.w_out"))?,
            conv,
        })
    }

    fn dropout(&self, x: Var<'g>) -> Result<Var<'g>> {
        let Some(rng) = &self.dropout else { return Ok(x) };
        let p = self.config.dropout;
        let mut rng = rng.borrow_mut();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.value().len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        x.mul(self.graph.constant(Tensor::new(x.shape(), mask)?))
    }

    fn wrap(&self, x: Var<'g>, norm: &str, sub: impl FnOnce(Var<'g>) -> Result<Var<'g>>) -> Result<Var<'g>> {
        let norm = self.norm(norm)?;
        layers::sublayer_wrap(x, &norm, |v| self.dropout(sub(v)?))
    }

    fn embed(&self, tokens: &[u32]) -> Result<Var<'g>> {
        let v = self.config.vocab_size;
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= v) {
            return Err(Error::Contract(format!(
                "token id {bad} is outside the vocabulary of {v}"
            )));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let d = self.config.d_model;
        let x = self
            .var("shared.embedding")?
            .gather_rows(&ids)?
            .scale((d as f64).sqrt());
        if self.config.variant.is_conv() {
            return Ok(x);
        }
        x.add(self.graph.constant(sinusoidal_positions(tokens.len(), d)))
    }

    pub fn encode(&self, src: &[u32]) -> Result<Var<'g>> {
        if src.is_empty() {
            return Err(Error::Contract("empty source sequence".into()));
        }
        self.encode_embedded(self.embed(src)?)
    }

    /// The encoder stack applied to already-embedded inputs `[n×d]`, with no
    /// positional signal added.
    pub fn encode_embedded(&self, mut x: Var<'g>) -> Result<Var<'g>> {
        let heads = self.config.num_heads;
        for i in 0..self.config.num_layers {
            let p = format!("encoder.layers.{i}");
            x = if self.config.variant.is_conv() {
                let block = self.conv_block(&format!("{p}.conv"), i)?;
                self.wrap(x, &format!("{p}.conv_norm"), |v| {
                    layers::glu_conv_block(v, &block, Padding::Same)
                })?
            } else {
                let a = self.attn(&format!("{p}.self_attn"))?;
                self.wrap(x, &format!("{p}.self_attn_norm"), |v| {
                    attention::multi_head_attention(v, v, &a, heads, None)
                })?
            };
            let f = self.ffn(&format!("{p}.ffn"))?;
            x = self.wrap(x, &format!("{p}.ffn_norm"), |v| layers::ffn(v, &f))?;
        }
        if self.config.has_encoder_cross_attention() {
            let a = self.attn("encoder.segment_attn")?;
            x = self.wrap(x, "encoder.segment_attn_norm", |v| {
                attention::multi_head_attention(v, v, &a, heads, None)
            })?;
        }
        Ok(x)
    }

    /// Logits `[m×vocab]` for decoder inputs `dec_in` (already shifted).
    pub fn decode(&self, encoded: Var<'g>, dec_in: &[u32]) -> Result<Var<'g>> {
        let m = dec_in.len();
        if m == 0 {
            return Err(Error::Contract("empty target sequence".into()));
        }
        if m > self.config.max_target_len {
            return Err(Error::Contract(format!(
                "target length {m} exceeds max_target_len {}",
                self.config.max_target_len
            )));
        }
        let heads = self.config.num_heads;
        let mask = (!self.config.variant.is_conv()).then(|| attention::causal_mask(self.graph, m));
        let mut x = self.embed(dec_in)?;
        for i in 0..self.config.num_layers {
            let p = format!("decoder.layers.{i}");
            x = if self.config.variant.is_conv() {
                let block = self.conv_block(&format!("{p}.conv"), i)?;
                self.wrap(x, &format!("{p}.conv_norm"), |v| {
                    layers::glu_conv_block(v, &block, Padding::Causal)
                })?
            } else {
                let a = self.attn(&format!("{p}.self_attn"))?;
                self.wrap(x, &format!("{p}.self_attn_norm"), |v| {
                    attention::multi_head_attention(v, v, &a, heads, mask)
                })?
            };
            let c = self.attn(&format!("{p}.cross_attn"))?;
            x = self.wrap(x, &format!("{p}.cross_attn_norm"), |v| {
                attention::multi_head_attention(v, encoded, &c, heads, None)
            })?;
            let f = self.ffn(&format!("{p}.ffn"))?;
            x = self.wrap(x, &format!("{p}.ffn_norm"), |v| layers::ffn(v, &f))?;
        }
        let fin = self.norm("decoder.final_norm")?;
        let h = x.layer_norm(fin.gamma, fin.beta, layers::LN_EPS)?;
        h.matmul(self.var("shared.embedding")?.transpose()?)
    }

    /// Teacher-forced logits: row `t` scores the prediction of `tgt[t]`.
    pub fn forward(&self, src: &[u32], tgt: &[u32]) -> Result<Var<'g>> {
        if tgt.is_empty() {
            return Err(Error::Contract("empty target sequence".into()));
        }
        let encoded = self.encode(src)?;
        self.decode(encoded, &shift_right(tgt))
    }
}
