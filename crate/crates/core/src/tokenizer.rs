//! Turning a `sensors x time_samples` PDP matrix into a token sequence.
//!
//! * Sensor snapshot (SST): one token per sensor, holding that sensor's whole
//!   delay profile.
//! * Time snapshot (TST): one token per delay bin, holding every sensor's
//!   power at that bin.
//! * Patch-based (PBT): the matrix is cut into `patch_h x patch_w` tiles;
//!   tiles are visited row-major over the tile grid and flattened row-major.
//!
//! All three are pure rearrangements, so [`detokenize`] inverts them exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::PdpMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TokenizerSpec {
    Sst,
    Tst,
    Pbt { patch_h: usize, patch_w: usize },
}

impl TokenizerSpec {
    /// 3 sensors x 8 delay bins, giving 96 tokens of length 24 on 18 x 128.
    pub const DEFAULT_PBT: TokenizerSpec = TokenizerSpec::Pbt { patch_h: 3, patch_w: 8 };

    pub fn name(&self) -> &'static str {
        match self {
            TokenizerSpec::Sst => "sst",
            TokenizerSpec::Tst => "tst",
            TokenizerSpec::Pbt { .. } => "pbt",
        }
    }

    /// `(token count, token length)` for a `sensors x time_samples` input.
    pub fn token_shape(&self, sensors: usize, time_samples: usize) -> Result<(usize, usize)> {
        match *self {
            TokenizerSpec::Sst => Ok((sensors, time_samples)),
            TokenizerSpec::Tst => Ok((time_samples, sensors)),
            TokenizerSpec::Pbt { patch_h, patch_w } => {
                if patch_h == 0 || patch_w == 0 || sensors % patch_h != 0 || time_samples % patch_w != 0 {
                    return Err(Error::Config(format!(
                        "patch {patch_h}x{patch_w} does not tile a {sensors}x{time_samples} PDP"
                    )));
                }
                Ok(((sensors / patch_h) * (time_samples / patch_w), patch_h * patch_w))
            }
        }
    }

    /// Whether token `i` always corresponds to sensor `i`.
    pub fn is_sensor_aligned(&self) -> bool {
        matches!(self, TokenizerSpec::Sst)
    }
}

impl fmt::Display for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerSpec::Pbt { patch_h, patch_w } => write!(f, "pbt({patch_h}x{patch_w})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for TokenizerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sst" => Ok(TokenizerSpec::Sst),
            "tst" => Ok(TokenizerSpec::Tst),
            "pbt" => Ok(TokenizerSpec::DEFAULT_PBT),
            other => Err(Error::Config(format!("unknown tokenizer {other:?} (expected sst, tst or pbt)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// `[token count, token length]`.
    pub tokens: Tensor,
    pub kind: TokenizerSpec,
}

impl TokenSequence {
    pub fn count(&self) -> usize {
        self.tokens.rows()
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }
}

/// Writes the tokens of a row-major `sensors x time_samples` matrix into `out`.
pub fn tokenize_into(matrix: &[f64], sensors: usize, time_samples: usize, spec: &TokenizerSpec, out: &mut [f64]) -> Result<()> {
    let (n_tk, n_st) = spec.token_shape(sensors, time_samples)?;
    if matrix.len() != sensors * time_samples || out.len() != n_tk * n_st {
        return Err(Error::shape(
            "tokenize",
            format!("{} values for {sensors}x{time_samples}, output {}", matrix.len(), out.len()),
        ));
    }
    for (dst, src) in token_index_map(sensors, time_samples, spec)?.into_iter().enumerate() {
        out[dst] = matrix[src];
    }
    Ok(())
}

pub fn tokenize(pdp: &PdpMatrix, spec: &TokenizerSpec) -> Result<TokenSequence> {
    let (n_tk, n_st) = spec.token_shape(pdp.sensors(), pdp.time_samples())?;
    let mut out = vec![0.0; n_tk * n_st];
    tokenize_into(pdp.powers(), pdp.sensors(), pdp.time_samples(), spec, &mut out)?;
    Ok(TokenSequence {
        tokens: Tensor::new(vec![n_tk, n_st], out)?,
        kind: *spec,
    })
}

/// Inverse of [`tokenize`]: returns the row-major `sensors x time_samples` matrix.
pub fn detokenize(tokens: &TokenSequence, spec: &TokenizerSpec, shape: (usize, usize)) -> Result<Vec<f64>> {
    let (sensors, time_samples) = shape;
    let (n_tk, n_st) = spec.token_shape(sensors, time_samples)?;
    if tokens.kind != *spec || tokens.tokens.shape() != [n_tk, n_st] {
        return Err(Error::shape(
            "detokenize",
            format!("{:?} tokens of kind {} for {spec} on {sensors}x{time_samples}", tokens.tokens.shape(), tokens.kind),
        ));
    }
    let mut out = vec![0.0; sensors * time_samples];
    for (src, dst) in token_index_map(sensors, time_samples, spec)?.into_iter().enumerate() {
        out[dst] = tokens.tokens.data()[src];
    }
    Ok(out)
}

/// For each flat token position, the flat matrix index it reads from.
fn token_index_map(sensors: usize, time_samples: usize, spec: &TokenizerSpec) -> Result<Vec<usize>> {
    spec.token_shape(sensors, time_samples)?;
    let mut map = Vec::with_capacity(sensors * time_samples);
    match *spec {
        TokenizerSpec::Sst => map.extend(0..sensors * time_samples),
        TokenizerSpec::Tst => {
            for t in 0..time_samples {
                map.extend((0..sensors).map(|s| s * time_samples + t));
            }
        }
        TokenizerSpec::Pbt { patch_h, patch_w } => {
            for pi in 0..sensors / patch_h {
                for pj in 0..time_samples / patch_w {
                    for a in 0..patch_h {
                        for b in 0..patch_w {
                            map.push((pi * patch_h + a) * time_samples + pj * patch_w + b);
                        }
                    }
                }
            }
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(sensors: usize, n_ts: usize) -> PdpMatrix {
        let powers = (0..sensors * n_ts).map(|i| i as f64).collect();
        PdpMatrix::new(sensors, n_ts, powers, [0.0; 2], 1.0).unwrap()
    }

    #[test]
    fn token_counts_on_default_grid() {
        let m = ramp(18, 128);
        let sst = tokenize(&m, &TokenizerSpec::Sst).unwrap();
        assert_eq!((sst.count(), sst.width()), (18, 128));
        let tst = tokenize(&m, &TokenizerSpec::Tst).unwrap();
        assert_eq!((tst.count(), tst.width()), (128, 18));
        let pbt = tokenize(&m, &TokenizerSpec::DEFAULT_PBT).unwrap();
        assert_eq!((pbt.count(), pbt.width()), (96, 24));
    }

    #[test]
    fn layouts_match_definitions() {
        let m = ramp(4, 6);
        let sst = tokenize(&m, &TokenizerSpec::Sst).unwrap();
        assert_eq!(sst.tokens.row(2), m.row(2));
        let tst = tokenize(&m, &TokenizerSpec::Tst).unwrap();
        assert_eq!(tst.tokens.row(5), &[5.0, 11.0, 17.0, 23.0]);
        let pbt = tokenize(&m, &TokenizerSpec::Pbt { patch_h: 2, patch_w: 3 }).unwrap();
        // second patch: sensors 0-1, bins 3-5
        assert_eq!(pbt.tokens.row(1), &[3.0, 4.0, 5.0, 9.0, 10.0, 11.0]);
        // third patch starts the next band of sensors
        assert_eq!(pbt.tokens.row(2), &[12.0, 13.0, 14.0, 18.0, 19.0, 20.0]);
    }

    #[test]
    fn non_dividing_patch_is_rejected() {
        let m = ramp(18, 128);
        assert!(matches!(
            tokenize(&m, &TokenizerSpec::Pbt { patch_h: 8, patch_w: 3 }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_cell_patch() {
        let m = PdpMatrix::new(1, 1, vec![4.5], [0.0; 2], 1.0).unwrap();
        let spec = TokenizerSpec::Pbt { patch_h: 1, patch_w: 1 };
        let t = tokenize(&m, &spec).unwrap();
        assert_eq!(t.count(), 1);
        assert_eq!(detokenize(&t, &spec, (1, 1)).unwrap(), vec![4.5]);
    }

    #[test]
    fn detokenize_checks_shape() {
        let t = tokenize(&ramp(4, 6), &TokenizerSpec::Sst).unwrap();
        assert!(detokenize(&t, &TokenizerSpec::Sst, (6, 4)).is_err());
        assert!(detokenize(&t, &TokenizerSpec::Tst, (4, 6)).is_err());
    }

    #[test]
    fn parses_names() {
        assert_eq!("SST".parse::<TokenizerSpec>().unwrap(), TokenizerSpec::Sst);
        assert_eq!("pbt".parse::<TokenizerSpec>().unwrap(), TokenizerSpec::DEFAULT_PBT);
        assert!("vit".parse::<TokenizerSpec>().is_err());
    }
}
