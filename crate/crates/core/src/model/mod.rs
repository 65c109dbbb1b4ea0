//! Vanilla and SwiGLU Transformer encoders for PDP token sequences.

mod attention;
mod checkpoint;
mod config;
mod flops;
mod forward;
mod params;

pub use attention::{average_attention, AttentionRecord};
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{preset_dims, swiglu_hidden, Family, ModelConfig, ModelSize, PRESET_HEADS};
pub use flops::{count_flops, flops_breakdown, FlopsBreakdown};
pub use forward::{build_forward, forward, predict, token_batch, ForwardGraph};
pub use params::{init_std, EncoderLayer, FeedForward, ModelParams, Norm, OutputScaling, ParamKind, TRUNCATED_NORMAL_STD};
