//! PDP datasets: sensor layout, synthetic generation, power compression and
//! the binary on-disk format.

mod compress;
mod format;
mod generate;

pub use compress::{compress_pdp, to_db, CompressionParams};
pub use format::{read_dataset, write_dataset, write_labels_csv, FORMAT_VERSION, MAGIC};
pub use generate::{generate_dataset, generate_sample, GeneratorConfig, SPEED_OF_LIGHT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of delay bins kept per sensor.
pub const DEFAULT_TIME_SAMPLES: usize = 128;

/// Positions of the distributed sensors inside a rectangular hall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    /// `[x, y, z]` in meters.
    pub positions: Vec<[f64; 3]>,
    pub hall_length: f64,
    pub hall_width: f64,
    pub sensor_height: f64,
    pub device_height: f64,
}

impl Default for SensorLayout {
    /// 3 x 6 grid with 20 m spacing and a 10 m wall margin (120 m x 60 m hall),
    /// sensors at 8 m, devices at 1.5 m.
    fn default() -> Self {
        Self::grid(3, 6, 20.0, 10.0, 8.0, 1.5)
    }
}

impl SensorLayout {
    /// Regular grid of `rows x cols` sensors, enumerated row by row.
    pub fn grid(rows: usize, cols: usize, spacing: f64, margin: f64, sensor_height: f64, device_height: f64) -> Self {
        let mut positions = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                positions.push([margin + c as f64 * spacing, margin + r as f64 * spacing, sensor_height]);
            }
        }
        Self {
            positions,
            hall_length: 2.0 * margin + (cols.max(1) - 1) as f64 * spacing,
            hall_width: 2.0 * margin + (rows.max(1) - 1) as f64 * spacing,
            sensor_height,
            device_height,
        }
    }

    /// First `n` sensors of the default grid, e.g. `n = 8` for a reduced deployment.
    pub fn default_subset(n: usize) -> Result<Self> {
        let mut layout = Self::default();
        if n == 0 || n > layout.positions.len() {
            return Err(Error::Config(format!(
                "sensor subset must be 1..={}, got {n}",
                layout.positions.len()
            )));
        }
        layout.positions.truncate(n);
        Ok(layout)
    }

    pub fn sensor_count(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Config("layout needs at least one sensor".into()));
        }
        if !(self.hall_length > 0.0 && self.hall_width > 0.0) {
            return Err(Error::Config("hall dimensions must be positive".into()));
        }
        if !(self.sensor_height > 0.0 && self.device_height > 0.0) {
            return Err(Error::Config("heights must be positive".into()));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !(0.0..=self.hall_length).contains(&p[0]) || !(0.0..=self.hall_width).contains(&p[1]) || p[2] <= 0.0 {
                return Err(Error::Config(format!("sensor {i} at {p:?} lies outside the hall")));
            }
        }
        Ok(())
    }
}

/// One device sample: a `sensors x time_samples` grid of linear powers and
/// the device's 2-D position.
#[derive(Debug, Clone, PartialEq)]
pub struct PdpMatrix {
    sensors: usize,
    time_samples: usize,
    powers: Vec<f64>,
    pub label: [f64; 2],
    /// Seconds per delay bin.
    pub sample_period: f64,
}

impl PdpMatrix {
    pub fn new(sensors: usize, time_samples: usize, powers: Vec<f64>, label: [f64; 2], sample_period: f64) -> Result<Self> {
        if sensors == 0 || time_samples == 0 {
            return Err(Error::shape("PdpMatrix::new", "empty matrix"));
        }
        if powers.len() != sensors * time_samples {
            return Err(Error::shape(
                "PdpMatrix::new",
                format!("{sensors}x{time_samples} needs {} values, got {}", sensors * time_samples, powers.len()),
            ));
        }
        if let Some(v) = powers.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("PDP entries must be finite and >= 0, got {v}")));
        }
        Ok(Self {
            sensors,
            time_samples,
            powers,
            label,
            sample_period,
        })
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn time_samples(&self) -> usize {
        self.time_samples
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn row(&self, sensor: usize) -> &[f64] {
        &self.powers[sensor * self.time_samples..(sensor + 1) * self.time_samples]
    }

    pub fn row_mut(&mut self, sensor: usize) -> &mut [f64] {
        &mut self.powers[sensor * self.time_samples..(sensor + 1) * self.time_samples]
    }

    /// Applies power compression to every sensor row.
    pub fn compressed(&self, params: &CompressionParams) -> Result<PdpMatrix> {
        let mut powers = Vec::with_capacity(self.powers.len());
        for s in 0..self.sensors {
            powers.extend(compress_pdp(self.row(s), params)?);
        }
        Ok(PdpMatrix {
            powers,
            ..self.clone()
        })
    }

    /// Same matrix with sensor rows reordered: row `i` of the result is row
    /// `order[i]` of `self`.
    pub fn permuted_rows(&self, order: &[usize]) -> Result<PdpMatrix> {
        let mut seen = vec![false; self.sensors];
        if order.len() != self.sensors || order.iter().any(|&i| i >= self.sensors || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidInput("row order must be a permutation".into()));
        }
        let mut powers = Vec::with_capacity(self.powers.len());
        for &s in order {
            powers.extend_from_slice(self.row(s));
        }
        Ok(PdpMatrix {
            powers,
            ..self.clone()
        })
    }
}

/// Applies compression to a whole dataset.
pub fn compress_dataset(samples: &[PdpMatrix], params: &CompressionParams) -> Result<Vec<PdpMatrix>> {
    samples.iter().map(|s| s.compressed(params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_three_by_six() {
        let l = SensorLayout::default();
        assert_eq!(l.sensor_count(), 18);
        assert_eq!((l.hall_length, l.hall_width), (120.0, 60.0));
        assert_eq!(l.positions[0], [10.0, 10.0, 8.0]);
        assert_eq!(l.positions[17], [110.0, 50.0, 8.0]);
        l.validate().unwrap();
    }

    #[test]
    fn layout_validation() {
        let mut l = SensorLayout::default();
        l.positions[3][0] = 130.0;
        assert!(l.validate().is_err());
        let mut l = SensorLayout::default();
        l.positions.clear();
        assert!(l.validate().is_err());
        assert!(SensorLayout::default_subset(0).is_err());
        assert_eq!(SensorLayout::default_subset(8).unwrap().sensor_count(), 8);
    }

    #[test]
    fn pdp_matrix_rejects_negative_and_wrong_length() {
        assert!(PdpMatrix::new(2, 2, vec![0.0; 3], [0.0; 2], 1.0).is_err());
        assert!(PdpMatrix::new(1, 2, vec![0.0, -1.0], [0.0; 2], 1.0).is_err());
    }

    #[test]
    fn permuted_rows_checks_permutation() {
        let m = PdpMatrix::new(3, 1, vec![1.0, 2.0, 3.0], [0.0; 2], 1.0).unwrap();
        assert_eq!(m.permuted_rows(&[2, 0, 1]).unwrap().powers(), &[3.0, 1.0, 2.0]);
        assert!(m.permuted_rows(&[0, 0, 1]).is_err());
    }
}
