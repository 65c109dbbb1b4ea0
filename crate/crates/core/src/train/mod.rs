//! Mini-batch training: AdamW, warmup plus cosine schedule, mixed L1 loss
//! and an exponential moving average of the weights.

mod optim;
mod schedule;

pub use optim::{adamw_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use schedule::{lr_at, warmup_steps};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{random_drop, random_shift, srm_mixup, AugmentConfig, MixedSample};
use crate::dataio::{compress_dataset, CompressionParams, PdpMatrix};
use crate::error::{Error, Result};
use crate::model::{build_forward, token_batch, Checkpoint, CheckpointHeader, ModelConfig, ModelParams, OutputScaling};
use crate::tensor::{Tape, Tensor};

/// Stream offset separating the training RNG from the data generator's.
const TRAIN_STREAM_SALT: u64 = 0x7472_6169_6e00_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub ema_alpha: f64,
    /// Update the EMA after every optimizer step instead of every epoch.
    pub ema_per_step: bool,
    pub seed: u64,
    /// Samples per gradient shard. Shards are reduced in a fixed order, so
    /// results do not depend on the thread count.
    pub shard_size: usize,
    pub augment: AugmentConfig,
    pub compression: CompressionParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 400,
            epochs: 200,
            lr_min: 1e-5,
            lr_max: 2e-3,
            warmup_fraction: 0.05,
            weight_decay: 0.001,
            ema_alpha: 0.9,
            ema_per_step: false,
            seed: 0,
            shard_size: 50,
            augment: AugmentConfig::default(),
            compression: CompressionParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.shard_size == 0 {
            return Err(Error::Config("batch_size and shard_size must be >= 1".into()));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::Config("ema_alpha must be in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        self.compression.validate()
    }
}

/// Mean mixed L1 loss of one sample:
/// `lambda * |pred - y_a|_1 + (1 - lambda) * |pred - y_b|_1`.
pub fn srm_loss(pred: [f64; 2], y_a: [f64; 2], y_b: [f64; 2], lambda: f64) -> f64 {
    let l1 = |y: [f64; 2]| (pred[0] - y[0]).abs() + (pred[1] - y[1]).abs();
    lambda * l1(y_a) + (1.0 - lambda) * l1(y_b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches, meters.
    pub loss: f64,
    /// L2 norm of the last batch gradient.
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn loss_history(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.loss).collect()
    }
}

/// Batch-mean loss and parameter gradients, in [`ModelParams::visit`] order.
pub fn loss_and_grads(params: &ModelParams, config: &ModelConfig, batch: &[MixedSample], shard_size: usize) -> Result<(f64, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total = batch.len() as f64;
    let shards: Vec<(f64, Vec<Tensor>)> = batch
        .par_chunks(shard_size.max(1))
        .map(|shard| shard_loss(params, config, shard, true))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for ((l, g), shard) in shards.into_iter().zip(batch.chunks(shard_size.max(1))) {
        let w = shard.len() as f64 / total;
        loss += w * l;
        match &mut grads {
            None => {
                grads = Some(
                    g.into_iter()
                        .map(|mut t| {
                            t.data_mut().iter_mut().for_each(|v| *v *= w);
                            t
                        })
                        .collect(),
                )
            }
            Some(acc) => {
                for (a, t) in acc.iter_mut().zip(g) {
                    for (x, y) in a.data_mut().iter_mut().zip(t.data()) {
                        *x += w * y;
                    }
                }
            }
        }
    }
    Ok((loss, grads.expect("non-empty batch")))
}

/// Batch-mean loss without gradients.
pub fn batch_loss(params: &ModelParams, config: &ModelConfig, batch: &[MixedSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(shard_loss(params, config, batch, false)?.0)
}

fn shard_loss(params: &ModelParams, config: &ModelConfig, shard: &[MixedSample], with_grads: bool) -> Result<(f64, Vec<Tensor>)> {
    let refs: Vec<&PdpMatrix> = shard.iter().map(|s| &s.pdp).collect();
    let mut tape = Tape::new();
    let graph = build_forward(&mut tape, params, config, token_batch(&refs, config)?, with_grads)?;
    let ya: Vec<f64> = shard.iter().flat_map(|s| s.label_a).collect();
    let yb: Vec<f64> = shard.iter().flat_map(|s| s.label_b).collect();
    let lambdas: Vec<f64> = shard.iter().map(|s| s.lambda).collect();
    let loss = tape.srm_l1(graph.prediction, &ya, &yb, &lambdas)?;
    let value = tape.value(loss).data()[0];
    if !with_grads {
        return Ok((value, Vec::new()));
    }
    let mut grads = tape.backward(loss)?;
    let out = graph
        .params
        .iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
        .collect();
    Ok((value, out))
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TRAIN_STREAM_SALT);
    rng.set_stream(epoch as u64);
    rng
}

/// Builds one epoch's augmented mini-batches from compressed samples.
fn epoch_batches(data: &[PdpMatrix], cfg: &TrainConfig, epoch: usize) -> Result<Vec<Vec<MixedSample>>> {
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let aug = &cfg.augment;
    order
        .chunks(cfg.batch_size)
        .map(|idx| {
            let mut batch: Vec<PdpMatrix> = idx.iter().map(|&i| data[i].clone()).collect();
            for pdp in &mut batch {
                if aug.drop {
                    random_drop(pdp, aug, &mut rng)?;
                }
                if aug.shift {
                    random_shift(pdp, aug, &mut rng);
                }
            }
            if aug.mixup {
                srm_mixup(&batch, aug, &mut rng)
            } else {
                Ok(batch.into_iter().map(MixedSample::unmixed).collect())
            }
        })
        .collect()
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Diverged {
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains `model` on raw (uncompressed) samples. `init` overrides the seeded
/// initialization; `on_epoch` sees every epoch's log entry as it completes.
pub fn train(
    dataset: &[PdpMatrix],
    model: &ModelConfig,
    cfg: &TrainConfig,
    init: Option<ModelParams>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    model.validate()?;
    cfg.augment.validate(model.sensors)?;
    let data = compress_dataset(dataset, &cfg.compression)?;
    let mut params = match init {
        Some(p) => p,
        None => {
            let mut p = ModelParams::init(model, cfg.seed)?;
            let labels: Vec<[f64; 2]> = data.iter().map(|s| s.label).collect();
            p.output = OutputScaling::fit(&labels);
            p
        }
    };
    let mut state = OptimizerState::new(&params);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.epochs, cfg);
        let mut loss_sum = 0.0;
        let mut grad_norm = 0.0;
        for batch in epoch_batches(&data, cfg, epoch)? {
            let step = state.step;
            let (loss, grads) = loss_and_grads(&params, model, &batch, cfg.shard_size).map_err(|e| diverged(step, e))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss {loss} in epoch {epoch}"),
                });
            }
            grad_norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
            adamw_step(&mut params, &grads, &mut state, lr, cfg.weight_decay)?;
            if cfg.ema_per_step {
                state.update_ema(&params, cfg.ema_alpha);
            }
            loss_sum += loss * batch.len() as f64;
        }
        if !cfg.ema_per_step {
            state.update_ema(&params, cfg.ema_alpha);
        }
        let log = EpochLog {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
            grad_norm,
        };
        on_epoch(&log);
        history.push(log);
    }

    let header = CheckpointHeader {
        config: model.clone(),
        output: params.output,
        compression: cfg.compression,
        loss_history: history.iter().map(|e| e.loss).collect(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            header,
            raw: params,
            ema: state.ema,
        },
        history,
    })
}

/// `epoch,lr,loss,grad_norm` rows.
pub fn write_training_log(path: impl AsRef<Path>, history: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "epoch,lr,loss,grad_norm").map_err(io)?;
    for e in history {
        writeln!(w, "{},{},{},{}", e.epoch, e.lr, e.loss, e.grad_norm).map_err(io)?;
    }
    w.flush().map_err(io)
}
