use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// LayerNorm, ReLU MLP with biases, class token and learned positions.
    Vanilla,
    /// RMSNorm, bias-free SwiGLU FFN, average pooling, no positions.
    LSwiGlu,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "vanilla" | "vanillat" => Ok(Family::Vanilla),
            "lswiglu" | "lswiglut" => Ok(Family::LSwiGlu),
            other => Err(Error::Config(format!("unknown model family {other:?} (expected vanilla or lswiglu)"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Vanilla => "vanilla",
            Family::LSwiGlu => "lswiglu",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    Small,
    Medium,
    Large,
}

impl ModelSize {
    pub const ALL: [ModelSize; 3] = [ModelSize::Small, ModelSize::Medium, ModelSize::Large];

    /// FLOPs budget per forward pass on the 18-sensor layout.
    pub fn flops_budget(self) -> f64 {
        match self {
            ModelSize::Small => 4.5e6,
            ModelSize::Medium => 16.5e6,
            ModelSize::Large => 63.5e6,
        }
    }

    /// Budget of the sensor-snapshot models on an 8-sensor deployment.
    pub fn reduced_budget(self) -> f64 {
        match self {
            ModelSize::Small => 1.8e6,
            ModelSize::Medium => 7.0e6,
            ModelSize::Large => 27.5e6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelSize::Small => "small",
            ModelSize::Medium => "medium",
            ModelSize::Large => "large",
        }
    }
}

impl FromStr for ModelSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(ModelSize::Small),
            "medium" => Ok(ModelSize::Medium),
            "large" => Ok(ModelSize::Large),
            other => Err(Error::Config(format!("unknown model size {other:?}"))),
        }
    }
}

/// Attention heads used by every preset.
pub const PRESET_HEADS: usize = 6;

/// `(layers, embedding width, hidden width)` of the preset grid.
pub fn preset_dims(tokenizer: &TokenizerSpec, size: ModelSize) -> (usize, usize, usize) {
    use ModelSize::*;
    match (tokenizer, size) {
        (TokenizerSpec::Pbt { .. }, Small) => (5, 12, 18),
        (TokenizerSpec::Pbt { .. }, Medium) => (8, 24, 44),
        (TokenizerSpec::Pbt { .. }, Large) => (16, 36, 86),
        (TokenizerSpec::Tst, Small) => (3, 12, 18),
        (TokenizerSpec::Tst, Medium) => (5, 24, 44),
        (TokenizerSpec::Tst, Large) => (13, 30, 86),
        (TokenizerSpec::Sst, Small) => (6, 48, 68),
        (TokenizerSpec::Sst, Medium) => (10, 72, 122),
        (TokenizerSpec::Sst, Large) => (16, 96, 316),
    }
}

/// SwiGLU hidden widths matched to the Vanilla sensor-snapshot budgets.
pub fn swiglu_hidden(size: ModelSize) -> usize {
    match size {
        ModelSize::Small => 54,
        ModelSize::Medium => 94,
        ModelSize::Large => 231,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub n_layers: usize,
    pub d_emb: usize,
    /// MLP width for Vanilla, gate/value width for SwiGLU.
    pub hidden: usize,
    pub n_heads: usize,
    pub tokenizer: TokenizerSpec,
    pub use_class_token: bool,
    pub use_pos_emb: bool,
    pub out_dim: usize,
    /// Input PDP shape `(sensors, time_samples)`.
    pub sensors: usize,
    pub time_samples: usize,
    pub norm_eps: f64,
}

impl ModelConfig {
    /// Builds a config with the family's default class-token and positional flags.
    pub fn new(
        family: Family,
        tokenizer: TokenizerSpec,
        (n_layers, d_emb, hidden): (usize, usize, usize),
        n_heads: usize,
        (sensors, time_samples): (usize, usize),
    ) -> Result<Self> {
        let vanilla = family == Family::Vanilla;
        let cfg = Self {
            family,
            n_layers,
            d_emb,
            hidden,
            n_heads,
            tokenizer,
            use_class_token: vanilla,
            use_pos_emb: vanilla,
            out_dim: 2,
            sensors,
            time_samples,
            norm_eps: 1e-5,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid preset for `tokenizer` and `size`. The SwiGLU family is only
    /// defined for sensor-snapshot tokens.
    pub fn preset(family: Family, tokenizer: TokenizerSpec, size: ModelSize, sensors: usize, time_samples: usize) -> Result<Self> {
        let (layers, d_emb, hidden) = preset_dims(&tokenizer, size);
        let hidden = match family {
            Family::Vanilla => hidden,
            Family::LSwiGlu => {
                if tokenizer != TokenizerSpec::Sst {
                    return Err(Error::Config("lswiglu presets are defined for sst tokens only".into()));
                }
                swiglu_hidden(size)
            }
        };
        Self::new(family, tokenizer, (layers, d_emb, hidden), PRESET_HEADS, (sensors, time_samples))
    }

    /// Parses names like `sst-small` into a preset on the default 18 x 128 input.
    pub fn named_preset(name: &str, family: Family) -> Result<Self> {
        let (tok, size) = name
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("preset {name:?} must look like <tokenizer>-<size>")))?;
        Self::preset(family, tok.parse()?, size.parse()?, 18, crate::dataio::DEFAULT_TIME_SAMPLES)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_emb == 0 || self.hidden == 0 || self.out_dim == 0 {
            return Err(Error::Config("layers, widths and output size must be >= 1".into()));
        }
        if self.n_heads == 0 || self.d_emb % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {} is not divisible by {} heads",
                self.d_emb, self.n_heads
            )));
        }
        if !(self.norm_eps >= 0.0) {
            return Err(Error::Config("norm_eps must be >= 0".into()));
        }
        self.tokenizer.token_shape(self.sensors, self.time_samples)?;
        Ok(())
    }

    /// `(tokens from the tokenizer, token length)`.
    pub fn token_shape(&self) -> (usize, usize) {
        self.tokenizer
            .token_shape(self.sensors, self.time_samples)
            .expect("validated config")
    }

    /// Sequence length seen by the encoder, including the class token.
    pub fn seq_len(&self) -> usize {
        self.token_shape().0 + usize::from(self.use_class_token)
    }

    pub fn head_width(&self) -> usize {
        self.d_emb / self.n_heads
    }

    /// Same architecture on a different sensor count.
    pub fn with_sensors(&self, sensors: usize) -> Result<Self> {
        let cfg = Self {
            sensors,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
