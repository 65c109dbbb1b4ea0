//! Checkpoint files.
//!
//! Layout (little-endian): magic `b"PDPC"`, `u32` version, `u64` header
//! length, JSON header, `u64` parameter count, then the raw weights and the
//! EMA weights as `f32` in [`ModelParams::visit`] order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{ModelParams, OutputScaling};
use crate::dataio::CompressionParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PDPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub output: OutputScaling,
    /// Preprocessing the model was trained on.
    pub compression: CompressionParams,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub raw: ModelParams,
    pub ema: ModelParams,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        &self.header.config
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let json = serde_json::to_vec(&self.header)?;
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let raw = self.raw.to_flat();
        let ema = self.ema.to_flat();
        if raw.len() != ema.len() {
            return Err(Error::shape("Checkpoint::save", "raw and EMA weights differ in size"));
        }
        (|| -> std::io::Result<()> {
            w.write_all(&CHECKPOINT_MAGIC)?;
            w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
            w.write_u64::<LittleEndian>(json.len() as u64)?;
            w.write_all(&json)?;
            w.write_u64::<LittleEndian>(raw.len() as u64)?;
            for v in raw.iter().chain(&ema) {
                w.write_f32::<LittleEndian>(*v as f32)?;
            }
            w.flush()
        })()
        .map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let fmt = |e: std::io::Error| Error::Format(format!("checkpoint {}: {e}", path.display()));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("{} is not a checkpoint (bad magic)", path.display())));
        }
        let version = r.read_u32::<LittleEndian>().map_err(fmt)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.read_u64::<LittleEndian>().map_err(fmt)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(fmt)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        header.config.validate()?;
        let count = r.read_u64::<LittleEndian>().map_err(fmt)? as usize;
        let mut buf = vec![0f32; 2 * count];
        r.read_f32_into::<LittleEndian>(&mut buf).map_err(fmt)?;
        let flat: Vec<f64> = buf.iter().map(|&v| v as f64).collect();
        let raw = ModelParams::from_flat(&header.config, &flat[..count], header.output)?;
        let ema = ModelParams::from_flat(&header.config, &flat[count..], header.output)?;
        Ok(Self { header, raw, ema })
    }
}
