use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power compression parameters.
///
/// A row `p` is mapped to `S^2 * (sum p)^(1/r - 1) * p`, which compresses the
/// row's total power in dB by the factor `r` and lifts it by `20 log10 S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionParams {
    /// Amplitude compression ratio, `>= 1`.
    pub ratio: f64,
    /// Target scale after compression, `> 0`.
    pub scale: f64,
    /// Take the element-wise square root of the compressed row.
    pub use_sqrt: bool,
}

impl Default for CompressionParams {
    fn default() -> Self {
        Self {
            ratio: 5.0,
            scale: 10.0,
            use_sqrt: true,
        }
    }
}

impl CompressionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 1.0 && self.ratio.is_finite()) {
            return Err(Error::Config(format!("compression ratio must be >= 1, got {}", self.ratio)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("compression scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }

    /// Common factor `S^2 * total^(1/r - 1)` applied to every bin of a row
    /// with the given total power. Zero for an all-zero row.
    pub fn gain(&self, total: f64) -> f64 {
        if total == 0.0 {
            0.0
        } else {
            self.scale * self.scale * total.powf(1.0 / self.ratio - 1.0)
        }
    }
}

/// Compresses one PDP row. A zero row stays zero (dropped sensors).
pub fn compress_pdp(row: &[f64], params: &CompressionParams) -> Result<Vec<f64>> {
    params.validate()?;
    if let Some(bad) = row.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!("PDP power must be finite and >= 0, got {bad}")));
    }
    let gain = params.gain(row.iter().sum());
    Ok(row
        .iter()
        .map(|p| {
            let c = gain * p;
            if params.use_sqrt {
                c.sqrt()
            } else {
                c
            }
        })
        .collect())
}

pub fn to_db(power: f64) -> f64 {
    10.0 * power.log10()
}
