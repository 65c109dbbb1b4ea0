use rayon::prelude::*;

use super::attention::AttentionRecord;
use super::config::{Family, ModelConfig};
use super::params::{FeedForward, ModelParams};
use crate::dataio::PdpMatrix;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenizer::tokenize_into;

/// Samples per tape when predicting a large set.
const PREDICT_CHUNK: usize = 128;

/// Handles into a tape holding one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardGraph {
    /// `[batch, 2]` predictions in meters.
    pub prediction: Var,
    /// One `[batch, seq, d_emb]` attention node per layer.
    pub attention: Vec<Var>,
    /// Parameter leaves in [`ModelParams::visit`] order.
    pub params: Vec<Var>,
}

/// Tokenizes a batch into `[batch, tokens, token length]`.
pub fn token_batch(samples: &[&PdpMatrix], config: &ModelConfig) -> Result<Tensor> {
    let (n_tk, n_st) = config.token_shape();
    let per = n_tk * n_st;
    let mut data = vec![0.0; samples.len() * per];
    for (s, out) in samples.iter().zip(data.chunks_mut(per.max(1))) {
        if s.sensors() != config.sensors || s.time_samples() != config.time_samples {
            return Err(Error::shape(
                "token_batch",
                format!(
                    "sample is {}x{}, model expects {}x{}",
                    s.sensors(),
                    s.time_samples(),
                    config.sensors,
                    config.time_samples
                ),
            ));
        }
        tokenize_into(s.powers(), s.sensors(), s.time_samples(), &config.tokenizer, out)?;
    }
    Tensor::new(vec![samples.len(), n_tk, n_st], data)
}

/// Records the forward pass for `tokens` (`[batch, tokens, token length]`).
/// With `trainable` the parameters become gradient-carrying leaves.
pub fn build_forward(tape: &mut Tape, params: &ModelParams, config: &ModelConfig, tokens: Tensor, trainable: bool) -> Result<ForwardGraph> {
    let (n_tk, n_st) = config.token_shape();
    if tokens.shape().len() != 3 || tokens.shape()[1..] != [n_tk, n_st] {
        return Err(Error::shape(
            "forward",
            format!("tokens {:?}, model expects [*, {n_tk}, {n_st}]", tokens.shape()),
        ));
    }
    if params.embed.shape() != [n_st, config.d_emb] || params.layers.len() != config.n_layers {
        return Err(Error::shape("forward", "parameters do not match the model config"));
    }
    let batch = tokens.shape()[0];
    let mut vars = Vec::new();
    params.visit(&mut |_, t, _| {
        vars.push(if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) });
    });
    let mut next = vars.iter().copied();
    let mut take = || next.next().expect("parameter count matches visit order");
    let eps = config.norm_eps;
    let vanilla = config.family == Family::Vanilla;

    let input = tape.constant(tokens);
    let embed = take();
    let mut x = tape.matmul(input, embed)?;
    if params.class_token.is_some() {
        let cls = take();
        x = tape.append_token(x, cls)?;
    }
    if params.pos_emb.is_some() {
        let pos = take();
        x = tape.add_positional(x, pos)?;
    }

    let mut attention = Vec::with_capacity(config.n_layers);
    for layer in &params.layers {
        let g = take();
        let h = if vanilla {
            let b = take();
            tape.layernorm(x, g, b, eps)?
        } else {
            tape.rmsnorm(x, g, eps)?
        };
        let (wq, wk, wv, wo) = (take(), take(), take(), take());
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;
        let a = tape.attention(q, k, v, config.n_heads)?;
        attention.push(a);
        let o = tape.matmul(a, wo)?;
        x = tape.add(x, o)?;

        let g = take();
        let h = if vanilla {
            let b = take();
            tape.layernorm(x, g, b, eps)?
        } else {
            tape.rmsnorm(x, g, eps)?
        };
        let f = match &layer.ffn {
            FeedForward::Mlp { .. } => {
                let (w1, b1, w2, b2) = (take(), take(), take(), take());
                let z = tape.matmul(h, w1)?;
                let z = tape.add_row(z, b1)?;
                let z = tape.relu(z)?;
                let z = tape.matmul(z, w2)?;
                tape.add_row(z, b2)?
            }
            FeedForward::SwiGlu { .. } => {
                let (wg, wv, wo) = (take(), take(), take());
                let gate = tape.matmul(h, wg)?;
                let gate = tape.swish(gate)?;
                let value = tape.matmul(h, wv)?;
                let z = tape.hadamard(gate, value)?;
                tape.matmul(z, wo)?
            }
        };
        x = tape.add(x, f)?;
    }

    let pooled = if params.class_token.is_some() {
        // the class token sits where it was appended, at the end
        tape.select_token(x, config.seq_len() - 1)?
    } else {
        tape.mean_over_tokens(x)?
    };
    let pooled = if params.head_norm.is_some() {
        let g = take();
        tape.rmsnorm(pooled, g, eps)?
    } else {
        pooled
    };
    let (hw, hb) = (take(), take());
    let y = tape.matmul(pooled, hw)?;
    let y = tape.add_row(y, hb)?;
    let y = tape.scale(y, params.output.scale)?;
    let offset = tape.constant(Tensor::new(vec![config.out_dim], output_offset(params, config))?);
    let prediction = tape.add_row(y, offset)?;
    debug_assert_eq!(tape.value(prediction).shape(), [batch, config.out_dim]);
    Ok(ForwardGraph {
        prediction,
        attention,
        params: vars,
    })
}

fn output_offset(params: &ModelParams, config: &ModelConfig) -> Vec<f64> {
    (0..config.out_dim)
        .map(|i| params.output.offset.get(i).copied().unwrap_or(0.0))
        .collect()
}

/// Single-sample prediction, optionally with every layer's attention maps.
pub fn forward(params: &ModelParams, config: &ModelConfig, pdp: &PdpMatrix, capture_attention: bool) -> Result<([f64; 2], Option<AttentionRecord>)> {
    let mut tape = Tape::new();
    let graph = build_forward(&mut tape, params, config, token_batch(&[pdp], config)?, false)?;
    let p = tape.value(graph.prediction).data();
    let record = capture_attention.then(|| AttentionRecord::from_tape(&tape, &graph.attention, 0));
    Ok(([p[0], p[1]], record))
}

/// Predictions for every sample, evaluated in parallel chunks.
pub fn predict(params: &ModelParams, config: &ModelConfig, samples: &[PdpMatrix]) -> Result<Vec<[f64; 2]>> {
    let chunks: Vec<Vec<[f64; 2]>> = samples
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let refs: Vec<&PdpMatrix> = chunk.iter().collect();
            let mut tape = Tape::new();
            let graph = build_forward(&mut tape, params, config, token_batch(&refs, config)?, false)?;
            Ok(tape
                .value(graph.prediction)
                .data()
                .chunks(config.out_dim)
                .map(|p| [p[0], p[1]])
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelSize;
    use crate::tokenizer::TokenizerSpec;

    fn pdp(sensors: usize, n_ts: usize, seed: u64) -> PdpMatrix {
        let powers = (0..sensors * n_ts)
            .map(|i| (((i as u64 + 1) * (seed + 7) * 2654435761) % 1000) as f64 / 1000.0)
            .collect();
        PdpMatrix::new(sensors, n_ts, powers, [1.0, 2.0], 1.0).unwrap()
    }

    #[test]
    fn sst_small_shape_chain() {
        let cfg = ModelConfig::preset(Family::LSwiGlu, TokenizerSpec::Sst, ModelSize::Small, 18, 128).unwrap();
        let params = ModelParams::init(&cfg, 0).unwrap();
        let mut tape = Tape::new();
        let g = build_forward(&mut tape, &params, &cfg, token_batch(&[&pdp(18, 128, 1)], &cfg).unwrap(), false).unwrap();
        assert_eq!(tape.value(g.prediction).shape(), [1, 2]);
        assert_eq!(g.attention.len(), 6);
        assert_eq!(tape.value(g.attention[0]).shape(), [1, 18, 48]);
        let (_, heads, tokens) = tape.attention_probs(g.attention[5]).unwrap();
        assert_eq!((heads, tokens), (6, 18));
    }

    #[test]
    fn vanilla_has_class_token() {
        let cfg = ModelConfig::preset(Family::Vanilla, TokenizerSpec::Sst, ModelSize::Small, 18, 128).unwrap();
        let params = ModelParams::init(&cfg, 0).unwrap();
        let (_, rec) = forward(&params, &cfg, &pdp(18, 128, 2), true).unwrap();
        let rec = rec.unwrap();
        assert_eq!(rec.tokens, 19);
        assert_eq!(rec.layers.len(), 6);
    }

    #[test]
    fn zero_input_and_zero_ffn_gives_head_bias() {
        let cfg = ModelConfig::new(Family::LSwiGlu, TokenizerSpec::Sst, (2, 6, 4), 2, (3, 5)).unwrap();
        let mut params = ModelParams::init(&cfg, 1).unwrap();
        for l in &mut params.layers {
            if let FeedForward::SwiGlu { w_gate, w_value, w_out } = &mut l.ffn {
                for t in [w_gate, w_value, w_out] {
                    t.data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        params.head_b = Tensor::new(vec![2], vec![0.25, -0.5]).unwrap();
        let zero = PdpMatrix::new(3, 5, vec![0.0; 15], [0.0; 2], 1.0).unwrap();
        let (p, _) = forward(&params, &cfg, &zero, false).unwrap();
        assert_eq!(p, [0.25, -0.5]);
    }

    #[test]
    fn batched_matches_single() {
        let cfg = ModelConfig::preset(Family::Vanilla, TokenizerSpec::DEFAULT_PBT, ModelSize::Small, 18, 128).unwrap();
        let params = ModelParams::init(&cfg, 5).unwrap();
        let samples: Vec<_> = (0..3).map(|s| pdp(18, 128, s)).collect();
        let batch = predict(&params, &cfg, &samples).unwrap();
        for (s, b) in samples.iter().zip(&batch) {
            let (p, _) = forward(&params, &cfg, s, false).unwrap();
            assert!((p[0] - b[0]).abs() < 1e-12 && (p[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = ModelConfig::preset(Family::LSwiGlu, TokenizerSpec::Sst, ModelSize::Small, 18, 128).unwrap();
        let params = ModelParams::init(&cfg, 0).unwrap();
        assert!(matches!(forward(&params, &cfg, &pdp(8, 128, 0), false), Err(Error::Shape { .. })));
    }
}
