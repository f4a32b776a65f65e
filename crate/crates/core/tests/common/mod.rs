//! Nested-loop reference implementations used as oracles by the integration
//! and acceptance tests. Nothing here calls into the library's tensor ops: the
//! oracle works on plain `Vec<Vec<f64>>` matrices and counts every scalar
//! multiplication it performs inside a contraction.

#![allow(dead_code)]

use std::collections::BTreeMap;

use convseq::model::{ConvVariant, Model, ModelConfig};
use convseq::tensor::Tensor;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    assert_eq!(t.rank(), 2, "expected a matrix, got {:?}", t.shape());
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    let cols = m.first().map_or(0, Vec::len);
    Tensor::new([m.len(), cols], m.iter().flatten().copied().collect()).unwrap()
}

pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| {
            assert_eq!(r.len(), s.len());
            r.iter().zip(s).map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pad {
    Same,
    Causal,
}

/// Tap offsets written out from the window definition: `j - ceil((k+1)/2)`
/// for `j = 1..=k` when centered, `j - k` when causal, times the dilation.
pub fn offsets(k: usize, dilation: usize, pad: Pad) -> Vec<isize> {
    let centre = (k + 2) / 2;
    (1..=k)
        .map(|j| {
            let o = match pad {
                Pad::Same => j as isize - centre as isize,
                Pad::Causal => j as isize - k as isize,
            };
            o * dilation as isize
        })
        .collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Counts multiplications performed inside contractions.
#[derive(Default)]
pub struct Oracle {
    pub macs: u64,
}

impl Oracle {
    pub fn matmul(&mut self, a: &Mat, b: &Mat) -> Mat {
        let (n, k, m) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0.0; m]; n];
        for i in 0..n {
            assert_eq!(a[i].len(), k);
            for j in 0..m {
                let mut s = 0.0;
                for t in 0..k {
                    s += a[i][t] * b[t][j];
                    self.macs += 1;
                }
                out[i][j] = s;
            }
        }
        out
    }

    /// Per-channel convolution with kernel row `rows[c]` for channel `c`.
    /// Padded taps are multiplied as explicit zeros.
    pub fn depthwise(&mut self, x: &Mat, rows: &[Vec<f64>], dilation: usize, pad: Pad) -> Mat {
        let (n, d) = (x.len(), x[0].len());
        let k = rows[0].len();
        let offs = offsets(k, dilation, pad);
        let mut out = vec![vec![0.0; d]; n];
        for i in 0..n {
            for c in 0..d {
                let mut s = 0.0;
                for (j, &o) in offs.iter().enumerate() {
                    let p = i as isize + o;
                    let v = if p >= 0 && (p as usize) < n {
                        x[p as usize][c]
                    } else {
                        0.0
                    };
                    s += rows[c][j] * v;
                    self.macs += 1;
                }
                out[i][c] = s;
            }
        }
        out
    }

    /// Tied softmax-normalized kernel `w` of shape `[H×k]`: channel `c` uses
    /// row `c·H/d`.
    pub fn lightweight(&mut self, x: &Mat, w: &Mat, dilation: usize, pad: Pad) -> Mat {
        let d = x[0].len();
        let h = w.len();
        let norm: Vec<Vec<f64>> = w.iter().map(|r| softmax(r)).collect();
        let rows: Vec<Vec<f64>> = (0..d).map(|c| norm[c * h / d].clone()).collect();
        self.depthwise(x, &rows, dilation, pad)
    }

    /// Materializes every position's kernel from `x_i · wq` (`wq` is
    /// `[d × H·k]`, head-major) and convolves position `i` with its own kernel.
    pub fn dynamic(&mut self, x: &Mat, wq: &Mat, heads: usize, k: usize, dilation: usize, pad: Pad) -> Mat {
        let (n, d) = (x.len(), x[0].len());
        let offs = offsets(k, dilation, pad);
        let logits = self.matmul(x, wq);
        let mut out = vec![vec![0.0; d]; n];
        for i in 0..n {
            let kernels: Vec<Vec<f64>> = (0..heads).map(|h| softmax(&logits[i][h * k..(h + 1) * k])).collect();
            for c in 0..d {
                let row = &kernels[c * heads / d];
                let mut s = 0.0;
                for (j, &o) in offs.iter().enumerate() {
                    let p = i as isize + o;
                    let v = if p >= 0 && (p as usize) < n {
                        x[p as usize][c]
                    } else {
                        0.0
                    };
                    s += row[j] * v;
                    self.macs += 1;
                }
                out[i][c] = s;
            }
        }
        out
    }

    /// Scores for every (query, key) pair are computed, then masked when
    /// `causal`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        xq: &Mat,
        xkv: &Mat,
        wq: &Mat,
        wk: &Mat,
        wv: &Mat,
        wo: &Mat,
        heads: usize,
        causal: bool,
    ) -> Mat {
        let q = self.matmul(xq, wq);
        let k = self.matmul(xkv, wk);
        let v = self.matmul(xkv, wv);
        let (m, n, d) = (q.len(), k.len(), q[0].len());
        let dh = d / heads;
        let mut concat = vec![vec![0.0; d]; m];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..m {
                let mut scores = vec![0.0; n];
                for (j, score) in scores.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for c in cols.clone() {
                        s += q[i][c] * k[j][c];
                        self.macs += 1;
                    }
                    *score = if causal && j > i {
                        f64::NEG_INFINITY
                    } else {
                        s / (dh as f64).sqrt()
                    };
                }
                let p = softmax(&scores);
                for c in cols.clone() {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += p[j] * v[j][c];
                        self.macs += 1;
                    }
                    concat[i][c] = s;
                }
            }
        }
        self.matmul(&concat, wo)
    }

    pub fn ffn(&mut self, x: &Mat, w1: &Mat, b1: &[f64], w2: &Mat, b2: &[f64]) -> Mat {
        let mut hid = self.matmul(x, w1);
        for row in &mut hid {
            for (v, b) in row.iter_mut().zip(b1) {
                *v = (*v + b).max(0.0);
            }
        }
        let mut out = self.matmul(&hid, w2);
        for row in &mut out {
            for (v, b) in row.iter_mut().zip(b2) {
                *v += b;
            }
        }
        out
    }
}

pub fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / (var + eps).sqrt() * gamma[c] + beta[c])
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

const LN_EPS: f64 = 1e-6;

/// Independent forward pass of a whole model, reading parameters by name.
pub struct ReferenceModel<'a> {
    cfg: &'a ModelConfig,
    params: &'a BTreeMap<String, Tensor>,
    pub oracle: Oracle,
}

impl<'a> ReferenceModel<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self {
            cfg: model.config(),
            params: model.params(),
            oracle: Oracle::default(),
        }
    }

    fn mat(&self, name: &str) -> Mat {
        to_mat(&self.params[name])
    }

    fn vec(&self, name: &str) -> Vec<f64> {
        self.params[name].data().to_vec()
    }

    fn wrap(&mut self, x: &Mat, norm: &str, sub: impl FnOnce(&mut Self, &Mat) -> Mat) -> Mat {
        let y = sub(self, x);
        let n = layer_norm(
            &y,
            &self.vec(&format!("{norm}.gamma")),
            &self.vec(&format!("{norm}.beta")),
            LN_EPS,
        );
        add(&n, x)
    }

    fn embed(&self, tokens: &[u32]) -> Mat {
        let e = self.mat("shared.embedding");
        let d = self.cfg.d_model;
        let scale = (d as f64).sqrt();
        tokens
            .iter()
            .enumerate()
            .map(|(pos, &t)| {
                (0..d)
                    .map(|i| {
                        let mut v = e[t as usize][i] * scale;
                        if !self.cfg.variant.is_conv() {
                            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                            let a = pos as f64 * freq;
                            v += if i % 2 == 0 { a.sin() } else { a.cos() };
                        }
                        v
                    })
                    .collect()
            })
            .collect()
    }

    fn width(&self, layer: usize) -> usize {
        match self.cfg.variant {
            ConvVariant::Dilated => [4, 4, 7, 7, 15, 15, 15, 15, 31, 31, 31]
                .get(layer)
                .copied()
                .unwrap_or(31),
            _ => self.cfg.window,
        }
    }

    fn conv_block(&mut self, x: &Mat, prefix: &str, layer: usize, pad: Pad) -> Mat {
        let wi = self.mat(&format!("{prefix}.w_in"));
        let ws = self.mat(&format!("{prefix}.w_gate"));
        let wo = self.mat(&format!("{prefix}.w_out"));
        let a = self.oracle.matmul(x, &wi);
        let g = self.oracle.matmul(x, &ws);
        let gated: Mat = a
            .iter()
            .zip(&g)
            .map(|(r, s)| r.iter().zip(s).map(|(u, v)| u / (1.0 + (-v).exp())).collect())
            .collect();
        let (k, dil) = (self.width(layer), self.cfg.dilation);
        let conv = match self.cfg.variant {
            ConvVariant::Dynamic => {
                let wq = self.mat(&format!("{prefix}.w_query"));
                self.oracle.dynamic(&gated, &wq, self.cfg.tying_heads, k, dil, pad)
            }
            _ => {
                let w = self.mat(&format!("{prefix}.kernel"));
                self.oracle.lightweight(&gated, &w, dil, pad)
            }
        };
        self.oracle.matmul(&conv, &wo)
    }

    fn attn(&mut self, xq: &Mat, xkv: &Mat, prefix: &str, causal: bool) -> Mat {
        let [q, k, v, o] = ["w_q", "w_k", "w_v", "w_o"].map(|w| self.mat(&format!("{prefix}.{w}")));
        self.oracle
            .attention(xq, xkv, &q, &k, &v, &o, self.cfg.num_heads, causal)
    }

    fn ffn(&mut self, x: &Mat, prefix: &str) -> Mat {
        let (w1, b1) = (self.mat(&format!("{prefix}.w1")), self.vec(&format!("{prefix}.b1")));
        let (w2, b2) = (self.mat(&format!("{prefix}.w2")), self.vec(&format!("{prefix}.b2")));
        self.oracle.ffn(x, &w1, &b1, &w2, &b2)
    }

    pub fn encode(&mut self, src: &[u32]) -> Mat {
        let mut x = self.embed(src);
        for i in 0..self.cfg.num_layers {
            let p = format!("encoder.layers.{i}");
            x = if self.cfg.variant.is_conv() {
                self.wrap(&x, &format!("{p}.conv_norm"), |s, v| {
                    s.conv_block(v, &format!("{p}.conv"), i, Pad::Same)
                })
            } else {
                self.wrap(&x, &format!("{p}.self_attn_norm"), |s, v| {
                    s.attn(v, v, &format!("{p}.self_attn"), false)
                })
            };
            x = self.wrap(&x, &format!("{p}.ffn_norm"), |s, v| s.ffn(v, &format!("{p}.ffn")));
        }
        if self.cfg.encoder_cross_attention && self.cfg.variant.is_conv() {
            x = self.wrap(&x, "encoder.segment_attn_norm", |s, v| {
                s.attn(v, v, "encoder.segment_attn", false)
            });
        }
        x
    }

    /// Teacher-forced logits for target `tgt` (start token 0, then `tgt`
    /// shifted right).
    pub fn logits(&mut self, src: &[u32], tgt: &[u32]) -> Mat {
        let enc = self.encode(src);
        let dec_in: Vec<u32> = std::iter::once(0).chain(tgt[..tgt.len() - 1].iter().copied()).collect();
        let mut x = self.embed(&dec_in);
        for i in 0..self.cfg.num_layers {
            let p = format!("decoder.layers.{i}");
            x = if self.cfg.variant.is_conv() {
                self.wrap(&x, &format!("{p}.conv_norm"), |s, v| {
                    s.conv_block(v, &format!("{p}.conv"), i, Pad::Causal)
                })
            } else {
                self.wrap(&x, &format!("{p}.self_attn_norm"), |s, v| {
                    s.attn(v, v, &format!("{p}.self_attn"), true)
                })
            };
            x = self.wrap(&x, &format!("{p}.cross_attn_norm"), |s, v| {
                s.attn(v, &enc, &format!("{p}.cross_attn"), false)
            });
            x = self.wrap(&x, &format!("{p}.ffn_norm"), |s, v| s.ffn(v, &format!("{p}.ffn")));
        }
        let h = layer_norm(
            &x,
            &self.vec("decoder.final_norm.gamma"),
            &self.vec("decoder.final_norm.beta"),
            LN_EPS,
        );
        let e = self.mat("shared.embedding");
        let et: Mat = (0..e[0].len()).map(|c| e.iter().map(|r| r[c]).collect()).collect();
        self.oracle.matmul(&h, &et)
    }
}

/// Replaces every parameter with uniform noise so that kernels, gates and
/// norms are all non-trivial.
pub fn randomize(model: &Model, rng: &mut impl Rng) -> Model {
    let params = model
        .params()
        .iter()
        .map(|(name, t)| {
            let data = (0..t.len()).map(|_| rng.gen_range(-0.6..0.6)).collect();
            (name.clone(), Tensor::new(t.shape().to_vec(), data).unwrap())
        })
        .collect();
    Model::from_params(model.config().clone(), params).unwrap()
}

pub fn random_tokens(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect()
}
