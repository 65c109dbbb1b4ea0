use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PdpMatrix, SensorLayout, DEFAULT_TIME_SAMPLES};
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Simplified multipath model used to synthesize PDPs.
///
/// Every sensor-device link gets a direct path at the line-of-sight delay and
/// `tap_count - 1` scattered paths whose excess delays are exponential. Tap
/// mean powers decay exponentially with excess delay and are scaled by
/// log-distance path loss with log-normal shadowing; tap magnitudes are
/// Rayleigh, so each tap power is exponential around its mean.
///
/// Each sensor also sees a static echo from its own mounting structure at a
/// sensor-specific excess delay. The echo pattern is what distinguishes one
/// sensor's PDP from another's when the geometry alone is symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub tap_count: usize,
    /// Mean excess delay of the scattered taps, seconds.
    pub excess_delay_mean: f64,
    /// Power decay constant of the scattered taps, seconds.
    pub decay_constant: f64,
    pub pathloss_exponent: f64,
    /// Shadowing standard deviation, dB.
    pub shadowing_sigma: f64,
    /// Linear power gain at 1 m.
    pub reference_gain: f64,
    /// Mean noise power per delay bin, linear.
    pub noise_floor: f64,
    /// Hz.
    pub sample_rate: f64,
    pub time_samples: usize,
    /// Mounting-echo power relative to the direct path; 0 disables it.
    pub mount_echo_power: f64,
    pub rng_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            tap_count: 20,
            excess_delay_mean: 60e-9,
            decay_constant: 40e-9,
            pathloss_exponent: 3.0,
            shadowing_sigma: 7.0,
            reference_gain: 1e-4,
            noise_floor: 1e-14,
            sample_rate: 122.88e6,
            time_samples: DEFAULT_TIME_SAMPLES,
            mount_echo_power: 0.5,
            rng_seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("excess_delay_mean", self.excess_delay_mean),
            ("decay_constant", self.decay_constant),
            ("pathloss_exponent", self.pathloss_exponent),
            ("reference_gain", self.reference_gain),
            ("sample_rate", self.sample_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.tap_count == 0 {
            return Err(Error::Config("tap_count must be >= 1".into()));
        }
        if self.time_samples == 0 {
            return Err(Error::Config("time_samples must be >= 1".into()));
        }
        if !(self.shadowing_sigma >= 0.0) || !(self.noise_floor >= 0.0) || !(self.mount_echo_power >= 0.0) {
            return Err(Error::Config("shadowing, noise floor and echo power must be >= 0".into()));
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Delay bin reached by a path of `distance` meters plus `excess` seconds.
    pub fn delay_bin(&self, distance: f64, excess: f64) -> usize {
        ((distance / SPEED_OF_LIGHT + excess) * self.sample_rate).floor() as usize
    }

    /// Excess delay, in bins, of the mounting echo seen by `sensor`.
    pub fn mount_echo_offset(sensor: usize) -> usize {
        // distinct for the first 19 sensors, spread over 3..=21 bins
        3 + (sensor * 7) % 19
    }
}

/// Draws `n_samples` devices uniformly over the hall and synthesizes their
/// PDPs. Sample `i` uses its own RNG stream, so the result does not depend on
/// how the work is scheduled.
pub fn generate_dataset(layout: &SensorLayout, gen: &GeneratorConfig, n_samples: usize) -> Result<Vec<PdpMatrix>> {
    layout.validate()?;
    gen.validate()?;
    if n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(gen.rng_seed, i as u64);
            let position = [
                rng.gen::<f64>() * layout.hall_length,
                rng.gen::<f64>() * layout.hall_width,
            ];
            synthesize(layout, gen, position, &mut rng)
        })
        .collect()
}

/// PDPs for a device at a fixed `position`, using stream `index` of the seed.
pub fn generate_sample(layout: &SensorLayout, gen: &GeneratorConfig, position: [f64; 2], index: u64) -> Result<PdpMatrix> {
    layout.validate()?;
    gen.validate()?;
    synthesize(layout, gen, position, &mut sample_rng(gen.rng_seed, index))
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn synthesize(layout: &SensorLayout, gen: &GeneratorConfig, position: [f64; 2], rng: &mut ChaCha8Rng) -> Result<PdpMatrix> {
    let n_ts = gen.time_samples;
    let sensors = layout.sensor_count();
    let shadowing = Normal::new(0.0, gen.shadowing_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let excess = Exp::new(1.0 / gen.excess_delay_mean).map_err(|e| Error::Config(e.to_string()))?;
    let mut powers = vec![0.0; sensors * n_ts];

    for (s, sensor) in layout.positions.iter().enumerate() {
        let dx = position[0] - sensor[0];
        let dy = position[1] - sensor[1];
        let dz = layout.device_height - sensor[2];
        let distance = (dx * dx + dy * dy + dz * dz).sqrt();
        let shadow_db = shadowing.sample(rng);
        let link_gain = gen.reference_gain * distance.max(1.0).powf(-gen.pathloss_exponent) * 10f64.powf(shadow_db / 10.0);
        let row = &mut powers[s * n_ts..(s + 1) * n_ts];
        let los_bin = gen.delay_bin(distance, 0.0);

        for tap in 0..gen.tap_count {
            let tau = if tap == 0 { 0.0 } else { excess.sample(rng) };
            let fading: f64 = Exp1.sample(rng);
            let bin = gen.delay_bin(distance, tau);
            if bin < n_ts {
                row[bin] += link_gain * (-tau / gen.decay_constant).exp() * fading;
            }
        }
        if gen.mount_echo_power > 0.0 {
            let bin = los_bin + GeneratorConfig::mount_echo_offset(s);
            if bin < n_ts {
                row[bin] += link_gain * gen.mount_echo_power;
            }
        }
        if gen.noise_floor > 0.0 && los_bin < n_ts {
            for v in &mut row[los_bin..] {
                let n: f64 = Exp1.sample(rng);
                *v += gen.noise_floor * n;
            }
        }
    }
    // stored at single precision so that files round-trip exactly
    let powers = powers.into_iter().map(|v| v as f32 as f64).collect();
    let label = [position[0] as f32 as f64, position[1] as f32 as f64];
    PdpMatrix::new(sensors, n_ts, powers, label, gen.sample_period())
}
