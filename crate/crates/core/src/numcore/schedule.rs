use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Linear warm-up from 0 to `base_lr` over the first `warmup_frac` of
/// training, then cosine decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("lr schedule needs total_steps > 0".into()));
    }
    if !(0.0..1.0).contains(&warmup_frac) {
        return Err(Error::Config(format!(
            "warmup fraction {warmup_frac} must lie in [0, 1)"
        )));
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warmup = total * warmup_frac;
    if step < warmup {
        return Ok(base_lr * step / warmup);
    }
    let progress = (step - warmup) / (total - warmup);
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
