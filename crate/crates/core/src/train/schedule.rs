use super::TrainConfig;

/// Number of warmup steps out of `total_steps`.
pub fn warmup_steps(total_steps: usize, cfg: &TrainConfig) -> usize {
    (cfg.warmup_fraction * total_steps as f64).round() as usize
}

/// Linear warmup from `lr_min` to `lr_max`, then cosine decay back to
/// `lr_min` at the final step.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warmup = warmup_steps(total_steps, cfg);
    let span = cfg.lr_max - cfg.lr_min;
    if step < warmup {
        return cfg.lr_min + span * step as f64 / warmup as f64;
    }
    let decay = total_steps.saturating_sub(1).saturating_sub(warmup);
    let progress = if decay == 0 {
        0.0
    } else {
        ((step - warmup) as f64 / decay as f64).min(1.0)
    };
    cfg.lr_min + 0.5 * span * (1.0 + (std::f64::consts::PI * progress).cos())
}
