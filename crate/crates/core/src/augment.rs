//! Training-time RF augmentations on (compressed) PDP inputs: random sensor
//! drop, random per-sensor time shift and similarity-weighted mixup.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::PdpMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub drop: bool,
    pub shift: bool,
    pub mixup: bool,
    /// Largest number of sensor rows zeroed by one drop.
    pub d_max: usize,
    pub drop_beta: (f64, f64),
    /// Standard deviation of the time shift, seconds.
    pub shift_sigma: f64,
    /// Kernel width of the mixup partner weights, square meters.
    pub mix_sigma_sq: f64,
    pub mix_lambda: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            drop: true,
            shift: true,
            mixup: true,
            d_max: 7,
            drop_beta: (0.1, 0.1),
            shift_sigma: 25e-9,
            mix_sigma_sq: 4.0,
            mix_lambda: (2.0, 2.0),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            drop: false,
            shift: false,
            mixup: false,
            ..Self::default()
        }
    }

    pub fn any(&self) -> bool {
        self.drop || self.shift || self.mixup
    }

    /// Parses a comma list such as `drop,shift,mixup`, `all` or `none`.
    pub fn with_enabled(mut self, list: &str) -> Result<Self> {
        self.drop = false;
        self.shift = false;
        self.mixup = false;
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.to_ascii_lowercase().as_str() {
                "drop" => self.drop = true,
                "shift" => self.shift = true,
                "mixup" | "srm" => self.mixup = true,
                "all" => {
                    self.drop = true;
                    self.shift = true;
                    self.mixup = true;
                }
                "none" => {}
                other => return Err(Error::Config(format!("unknown augmentation {other:?}"))),
            }
        }
        Ok(self)
    }

    pub fn validate(&self, sensors: usize) -> Result<()> {
        if self.d_max > sensors {
            return Err(Error::Config(format!("d_max {} exceeds {sensors} sensors", self.d_max)));
        }
        if !(self.shift_sigma >= 0.0 && self.shift_sigma.is_finite()) {
            return Err(Error::Config("shift_sigma must be >= 0".into()));
        }
        if !(self.mix_sigma_sq > 0.0) {
            return Err(Error::Config("mix_sigma_sq must be > 0".into()));
        }
        for (name, (a, b)) in [("drop_beta", self.drop_beta), ("mix_lambda", self.mix_lambda)] {
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::Config(format!("{name} parameters must be > 0")));
            }
        }
        Ok(())
    }
}

/// Number of rows dropped for a Beta draw `beta`.
pub fn drop_count(beta: f64, d_max: usize) -> usize {
    (d_max as f64 * beta).round() as usize
}

/// Zeroes `round(d_max * beta)` distinct, uniformly chosen sensor rows with
/// `beta ~ Beta(drop_beta)`. Returns the number of dropped rows.
pub fn random_drop<R: Rng + ?Sized>(pdp: &mut PdpMatrix, cfg: &AugmentConfig, rng: &mut R) -> Result<usize> {
    let beta = Beta::new(cfg.drop_beta.0, cfg.drop_beta.1).map_err(|e| Error::Config(e.to_string()))?;
    let count = drop_count(beta.sample(rng), cfg.d_max).min(pdp.sensors());
    for s in sample_indices(rng, pdp.sensors(), count) {
        pdp.row_mut(s).iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(count)
}

/// Zero-mean normal draw truncated to `[-2 sigma, 2 sigma]`.
pub fn truncated_shift<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return sigma * z;
        }
    }
}

/// Integer bin shift for a delay of `delta` seconds.
pub fn shift_bins(delta: f64, sample_period: f64) -> i64 {
    (delta / sample_period).round() as i64
}

/// Moves every entry `k` bins later, wrapping around the end of the row.
pub fn circular_shift(row: &mut [f64], k: i64) {
    if row.is_empty() {
        return;
    }
    let k = k.rem_euclid(row.len() as i64) as usize;
    row.rotate_right(k);
}

/// Shifts every sensor row independently by a truncated-normal delay.
pub fn random_shift<R: Rng + ?Sized>(pdp: &mut PdpMatrix, cfg: &AugmentConfig, rng: &mut R) {
    let period = pdp.sample_period;
    for s in 0..pdp.sensors() {
        let k = shift_bins(truncated_shift(cfg.shift_sigma, rng), period);
        circular_shift(pdp.row_mut(s), k);
    }
}

/// Unnormalized partner weight for squared label distance `dist_sq`.
pub fn mix_weight(dist_sq: f64, sigma_sq: f64) -> f64 {
    (-dist_sq / (2.0 * sigma_sq)).exp()
}

/// A mixed training input with the two labels it blends.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub pdp: PdpMatrix,
    pub label_a: [f64; 2],
    pub label_b: [f64; 2],
    /// Weight of sample A in both the input and the loss.
    pub lambda: f64,
}

impl MixedSample {
    pub fn unmixed(pdp: PdpMatrix) -> Self {
        let label = pdp.label;
        Self {
            pdp,
            label_a: label,
            label_b: label,
            lambda: 1.0,
        }
    }
}

/// Partner weights of every batch member for sample `a`, itself included.
pub fn partner_weights(labels: &[[f64; 2]], a: usize, sigma_sq: f64) -> Vec<f64> {
    let pa = labels[a];
    labels
        .iter()
        .map(|pb| mix_weight((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2), sigma_sq))
        .collect()
}

/// For every sample A draws a partner B from the label-similarity kernel
/// (A included) and `lambda ~ Beta(mix_lambda)`, returning
/// `lambda * x_A + (1 - lambda) * x_B` together with both labels.
pub fn srm_mixup<R: Rng + ?Sized>(batch: &[PdpMatrix], cfg: &AugmentConfig, rng: &mut R) -> Result<Vec<MixedSample>> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lambda_dist = Beta::new(cfg.mix_lambda.0, cfg.mix_lambda.1).map_err(|e| Error::Config(e.to_string()))?;
    let labels: Vec<[f64; 2]> = batch.iter().map(|p| p.label).collect();
    let mut out = Vec::with_capacity(batch.len());
    for (a, xa) in batch.iter().enumerate() {
        let weights = partner_weights(&labels, a, cfg.mix_sigma_sq);
        let b = sample_categorical(&weights, rng);
        let lambda = lambda_dist.sample(rng);
        let mut pdp = xa.clone();
        if b != a {
            let xb = &batch[b];
            if xb.powers().len() != xa.powers().len() {
                return Err(Error::shape("srm_mixup", "batch members differ in shape"));
            }
            for s in 0..pdp.sensors() {
                for (v, w) in pdp.row_mut(s).iter_mut().zip(xb.row(s)) {
                    *v = lambda * *v + (1.0 - lambda) * w;
                }
            }
        }
        out.push(MixedSample {
            pdp,
            label_a: xa.label,
            label_b: batch[b].label,
            lambda,
        });
    }
    Ok(out)
}

fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    // rounding can leave u marginally above the last weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(label: [f64; 2]) -> PdpMatrix {
        PdpMatrix::new(3, 4, (0..12).map(|i| i as f64 + 1.0).collect(), label, 1.0 / 122.88e6).unwrap()
    }

    #[test]
    fn drop_count_edges() {
        assert_eq!(drop_count(0.0, 7), 0);
        assert_eq!(drop_count(1.0, 7), 7);
        assert_eq!(drop_count(0.5 / 7.0 - 1e-12, 7), 0);
    }

    #[test]
    fn drop_zeroes_exactly_d_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AugmentConfig { d_max: 3, ..Default::default() };
        for _ in 0..50 {
            let orig = ramp([0.0; 2]);
            let mut m = orig.clone();
            let d = random_drop(&mut m, &cfg, &mut rng).unwrap();
            let zeroed = (0..3).filter(|&s| m.row(s).iter().all(|v| *v == 0.0)).count();
            assert_eq!(zeroed, d);
            for s in 0..3 {
                assert!(m.row(s).iter().all(|v| *v == 0.0) || m.row(s) == orig.row(s));
            }
        }
    }

    #[test]
    fn pure_shift() {
        let mut row = vec![0.0; 16];
        row[10] = 2.5;
        circular_shift(&mut row, 3);
        assert_eq!(row[13], 2.5);
        circular_shift(&mut row, -5);
        assert_eq!(row[8], 2.5);
        circular_shift(&mut row, 10);
        assert_eq!(row[2], 2.5);
    }

    #[test]
    fn zero_sigma_shift_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let orig = ramp([0.0; 2]);
        let mut m = orig.clone();
        random_shift(&mut m, &AugmentConfig { shift_sigma: 0.0, ..Default::default() }, &mut rng);
        assert_eq!(m, orig);
    }

    #[test]
    fn mixup_weights() {
        assert_eq!(mix_weight(0.0, 4.0), 1.0);
        assert!((mix_weight(8.0, 4.0) - (-1.0f64).exp()).abs() < 1e-15);
        let w = partner_weights(&[[0.0, 0.0], [1.0, 1.0], [5.0, 0.0]], 1, 4.0);
        assert!(w[1] >= w[0] && w[1] >= w[2]);
    }

    #[test]
    fn far_apart_batch_mixes_with_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<_> = (0..5).map(|i| ramp([100.0 * i as f64, 0.0])).collect();
        for m in srm_mixup(&batch, &AugmentConfig::default(), &mut rng).unwrap() {
            assert_eq!(m.label_a, m.label_b);
            assert_eq!(m.pdp.powers(), batch[(m.label_a[0] / 100.0) as usize].powers());
        }
    }

    #[test]
    fn enabled_list() {
        let c = AugmentConfig::default().with_enabled("drop,mixup").unwrap();
        assert!(c.drop && !c.shift && c.mixup);
        assert!(!AugmentConfig::default().with_enabled("none").unwrap().any());
        assert!(AugmentConfig::default().with_enabled("flip").is_err());
    }
}
