use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{Family, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of a standard normal truncated to `[-2, 2]`.
pub const TRUNCATED_NORMAL_STD: f64 = 0.879_625_6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Embedding,
    Gain,
    Bias,
}

impl ParamKind {
    /// Weight decay applies to projections and embeddings, not to norm gains or biases.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Embedding)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: Tensor,
    /// Present for LayerNorm, absent for RMSNorm.
    pub beta: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedForward {
    Mlp { w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor },
    SwiGlu { w_gate: Tensor, w_value: Tensor, w_out: Tensor },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn_norm: Norm,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ffn_norm: Norm,
    pub ffn: FeedForward,
}

/// Affine map from the head's output to meters, fitted to the training labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub offset: [f64; 2],
    pub scale: f64,
}

impl Default for OutputScaling {
    fn default() -> Self {
        Self {
            offset: [0.0; 2],
            scale: 1.0,
        }
    }
}

impl OutputScaling {
    /// Centers on the label mean and scales by the pooled label standard deviation.
    pub fn fit(labels: &[[f64; 2]]) -> Self {
        if labels.is_empty() {
            return Self::default();
        }
        let n = labels.len() as f64;
        let mean = [
            labels.iter().map(|l| l[0]).sum::<f64>() / n,
            labels.iter().map(|l| l[1]).sum::<f64>() / n,
        ];
        let var = labels
            .iter()
            .map(|l| (l[0] - mean[0]).powi(2) + (l[1] - mean[1]).powi(2))
            .sum::<f64>()
            / (2.0 * n);
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { offset: mean, scale }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `[token length, d_emb]`, no bias.
    pub embed: Tensor,
    pub class_token: Option<Tensor>,
    /// `[sequence length, d_emb]`.
    pub pos_emb: Option<Tensor>,
    pub layers: Vec<EncoderLayer>,
    /// RMSNorm gain applied after pooling (SwiGLU family).
    pub head_norm: Option<Tensor>,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub output: OutputScaling,
}

impl ModelParams {
    /// Zero weights, unit gains: the shape skeleton for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (_, n_st) = config.token_shape();
        let d = config.d_emb;
        let h = config.hidden;
        let norm = || Norm {
            gamma: Tensor::filled(&[d], 1.0),
            beta: (config.family == Family::Vanilla).then(|| Tensor::zeros(&[d])),
        };
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer {
                attn_norm: norm(),
                wq: Tensor::zeros(&[d, d]),
                wk: Tensor::zeros(&[d, d]),
                wv: Tensor::zeros(&[d, d]),
                wo: Tensor::zeros(&[d, d]),
                ffn_norm: norm(),
                ffn: match config.family {
                    Family::Vanilla => FeedForward::Mlp {
                        w1: Tensor::zeros(&[d, h]),
                        b1: Tensor::zeros(&[h]),
                        w2: Tensor::zeros(&[h, d]),
                        b2: Tensor::zeros(&[d]),
                    },
                    Family::LSwiGlu => FeedForward::SwiGlu {
                        w_gate: Tensor::zeros(&[d, h]),
                        w_value: Tensor::zeros(&[d, h]),
                        w_out: Tensor::zeros(&[h, d]),
                    },
                },
            })
            .collect();
        Ok(Self {
            embed: Tensor::zeros(&[n_st, d]),
            class_token: config.use_class_token.then(|| Tensor::zeros(&[d])),
            pos_emb: config.use_pos_emb.then(|| Tensor::zeros(&[config.seq_len(), d])),
            layers,
            head_norm: (config.family == Family::LSwiGlu).then(|| Tensor::filled(&[d], 1.0)),
            head_w: Tensor::zeros(&[d, config.out_dim]),
            head_b: Tensor::zeros(&[config.out_dim]),
            output: OutputScaling::default(),
        })
    }

    /// Matrices drawn from a normal truncated at two standard deviations and
    /// rescaled to std `min(0.02, sqrt(2 / (fan_in + fan_out)))`. Gains start
    /// at one; biases, the class token and positions start at zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        params.visit_mut(&mut |_, t, kind| {
            if kind == ParamKind::Weight {
                let std = init_std(t.shape()[0], t.shape()[1]);
                for v in t.data_mut() {
                    *v = std * truncated_normal(&mut rng) / TRUNCATED_NORMAL_STD;
                }
            }
        });
        Ok(params)
    }

    /// Visits every trainable tensor in declaration order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor, ParamKind)) {
        use ParamKind::*;
        f("embed".into(), &self.embed, Weight);
        if let Some(t) = &self.class_token {
            f("class_token".into(), t, Embedding);
        }
        if let Some(t) = &self.pos_emb {
            f("pos_emb".into(), t, Embedding);
        }
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            f(p("attn_norm.gamma"), &l.attn_norm.gamma, Gain);
            if let Some(b) = &l.attn_norm.beta {
                f(p("attn_norm.beta"), b, Bias);
            }
            f(p("wq"), &l.wq, Weight);
            f(p("wk"), &l.wk, Weight);
            f(p("wv"), &l.wv, Weight);
            f(p("wo"), &l.wo, Weight);
            f(p("ffn_norm.gamma"), &l.ffn_norm.gamma, Gain);
            if let Some(b) = &l.ffn_norm.beta {
                f(p("ffn_norm.beta"), b, Bias);
            }
            match &l.ffn {
                FeedForward::Mlp { w1, b1, w2, b2 } => {
                    f(p("ffn.w1"), w1, Weight);
                    f(p("ffn.b1"), b1, Bias);
                    f(p("ffn.w2"), w2, Weight);
                    f(p("ffn.b2"), b2, Bias);
                }
                FeedForward::SwiGlu { w_gate, w_value, w_out } => {
                    f(p("ffn.w_gate"), w_gate, Weight);
                    f(p("ffn.w_value"), w_value, Weight);
                    f(p("ffn.w_out"), w_out, Weight);
                }
            }
        }
        if let Some(t) = &self.head_norm {
            f("head_norm.gamma".into(), t, Gain);
        }
        f("head.w".into(), &self.head_w, Weight);
        f("head.b".into(), &self.head_b, Bias);
    }

    /// Mutable counterpart of [`ModelParams::visit`], same order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor, ParamKind)) {
        use ParamKind::*;
        f("embed".into(), &mut self.embed, Weight);
        if let Some(t) = &mut self.class_token {
            f("class_token".into(), t, Embedding);
        }
        if let Some(t) = &mut self.pos_emb {
            f("pos_emb".into(), t, Embedding);
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            f(p("attn_norm.gamma"), &mut l.attn_norm.gamma, Gain);
            if let Some(b) = &mut l.attn_norm.beta {
                f(p("attn_norm.beta"), b, Bias);
            }
            f(p("wq"), &mut l.wq, Weight);
            f(p("wk"), &mut l.wk, Weight);
            f(p("wv"), &mut l.wv, Weight);
            f(p("wo"), &mut l.wo, Weight);
            f(p("ffn_norm.gamma"), &mut l.ffn_norm.gamma, Gain);
            if let Some(b) = &mut l.ffn_norm.beta {
                f(p("ffn_norm.beta"), b, Bias);
            }
            match &mut l.ffn {
                FeedForward::Mlp { w1, b1, w2, b2 } => {
                    f(p("ffn.w1"), w1, Weight);
                    f(p("ffn.b1"), b1, Bias);
                    f(p("ffn.w2"), w2, Weight);
                    f(p("ffn.b2"), b2, Bias);
                }
                FeedForward::SwiGlu { w_gate, w_value, w_out } => {
                    f(p("ffn.w_gate"), w_gate, Weight);
                    f(p("ffn.w_value"), w_value, Weight);
                    f(p("ffn.w_out"), w_out, Weight);
                }
            }
        }
        if let Some(t) = &mut self.head_norm {
            f("head_norm.gamma".into(), t, Gain);
        }
        f("head.w".into(), &mut self.head_w, Weight);
        f("head.b".into(), &mut self.head_b, Bias);
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.visit(&mut |_, t, _| out.push(t));
        out
    }

    pub fn kinds(&self) -> Vec<ParamKind> {
        let mut out = Vec::new();
        self.visit(&mut |_, _, k| out.push(k));
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _, _| out.push(n));
        out
    }

    pub fn numel(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All trainable values concatenated in declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        self.visit(&mut |_, t, _| out.extend_from_slice(t.data()));
        out
    }

    /// Inverse of [`ModelParams::to_flat`] for the given config.
    pub fn from_flat(config: &ModelConfig, flat: &[f64], output: OutputScaling) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        if flat.len() != params.numel() {
            return Err(Error::shape(
                "ModelParams::from_flat",
                format!("config needs {} values, got {}", params.numel(), flat.len()),
            ));
        }
        let mut at = 0;
        params.visit_mut(&mut |_, t, _| {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        });
        params.output = output;
        Ok(params)
    }
}

pub fn init_std(fan_in: usize, fan_out: usize) -> f64 {
    0.02 * (1f64).min((2.0 / (fan_in + fan_out) as f64).sqrt() / 0.02)
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}
