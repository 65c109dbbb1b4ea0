use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Attention maps of one sample: `layers[l][h]` is a `tokens x tokens`
/// row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub tokens: usize,
    pub layers: Vec<Vec<Tensor>>,
}

impl AttentionRecord {
    /// Extracts sample `sample` from the attention nodes of a batched pass.
    pub fn from_tape(tape: &Tape, nodes: &[Var], sample: usize) -> Self {
        let mut tokens = 0;
        let layers = nodes
            .iter()
            .map(|&v| {
                let (probs, heads, n) = tape.attention_probs(v).expect("attention node");
                tokens = n;
                let per = n * n;
                (0..heads)
                    .map(|h| {
                        let at = (sample * heads + h) * per;
                        Tensor::new(vec![n, n], probs[at..at + per].to_vec()).expect("square map")
                    })
                    .collect()
            })
            .collect();
        Self { tokens, layers }
    }
}

/// Attention received by each key token in `layer`, averaged over heads and
/// query rows. The scores sum to one.
pub fn average_attention(record: &AttentionRecord, layer: usize) -> Result<Vec<f64>> {
    let heads = record.layers.get(layer).ok_or_else(|| {
        Error::InvalidInput(format!("layer {layer} out of range for {} layers", record.layers.len()))
    })?;
    let n = record.tokens;
    let mut scores = vec![0.0; n];
    if heads.is_empty() || n == 0 {
        return Ok(scores);
    }
    for map in heads {
        for row in map.data().chunks(n) {
            for (s, a) in scores.iter_mut().zip(row) {
                *s += a;
            }
        }
    }
    let norm = (heads.len() * n) as f64;
    scores.iter_mut().for_each(|s| *s /= norm);
    Ok(scores)
}
