//! Per-sample forward-pass FLOPs.
//!
//! Convention: a `[m, k] x [k, n]` product costs `2mkn`; attention scores
//! and the attention-weighted sum of values each cost `2 N^2 D` per layer;
//! score scaling costs one FLOP and softmax five per attention entry; norms
//! cost four FLOPs per element; residual adds, biases, activations and the
//! gating product cost one per element.

use serde::Serialize;

use super::config::{Family, ModelConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FlopsBreakdown {
    pub embedding: f64,
    pub positional: f64,
    /// `Q K^T` summed over layers.
    pub attention_scores: f64,
    /// Attention-weighted sum of values summed over layers.
    pub attention_values: f64,
    /// Score scaling and softmax.
    pub softmax: f64,
    /// Q, K, V and output projections.
    pub projections: f64,
    pub norms: f64,
    pub feed_forward: f64,
    pub residuals: f64,
    pub pooling: f64,
    pub head: f64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> f64 {
        self.embedding
            + self.positional
            + self.attention_scores
            + self.attention_values
            + self.softmax
            + self.projections
            + self.norms
            + self.feed_forward
            + self.residuals
            + self.pooling
            + self.head
    }
}

pub fn count_flops(config: &ModelConfig) -> f64 {
    flops_breakdown(config).total()
}

pub fn flops_breakdown(config: &ModelConfig) -> FlopsBreakdown {
    let (n_tk, n_st) = config.token_shape();
    let n = config.seq_len() as f64;
    let d = config.d_emb as f64;
    let h = config.hidden as f64;
    let l = config.n_layers as f64;
    let heads = config.n_heads as f64;
    let out = config.out_dim as f64;

    let ffn = match config.family {
        Family::Vanilla => 2.0 * n * d * h + n * h + n * h + 2.0 * n * h * d + n * d,
        Family::LSwiGlu => 2.0 * 2.0 * n * d * h + n * h + n * h + 2.0 * n * h * d,
    };
    let (pooling, head_norm) = if config.use_class_token {
        (0.0, 0.0)
    } else {
        (n * d, 4.0 * d)
    };
    let head_norm = if config.family == Family::LSwiGlu { head_norm } else { 0.0 };

    FlopsBreakdown {
        embedding: 2.0 * n_tk as f64 * n_st as f64 * d,
        positional: if config.use_pos_emb { n * d } else { 0.0 },
        attention_scores: l * 2.0 * n * n * d,
        attention_values: l * 2.0 * n * n * d,
        softmax: l * (heads * n * n + 5.0 * heads * n * n),
        projections: l * 4.0 * 2.0 * n * d * d,
        norms: l * 2.0 * 4.0 * n * d + head_norm,
        feed_forward: l * ffn,
        residuals: l * 2.0 * n * d,
        pooling,
        head: 2.0 * d * out + out,
    }
}
