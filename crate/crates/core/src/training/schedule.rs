//! Linear warmup followed by cosine decay.

pub fn warmup_steps(total: u64, warmup_fraction: f64) -> u64 {
    ((warmup_fraction * total as f64) - 1e-9).ceil().max(1.0) as u64
}

/// Learning rate at `step` in `0..=total`.
pub fn lr_schedule(step: u64, total: u64, base_lr: f64, warmup_fraction: f64) -> f64 {
    let w = warmup_steps(total, warmup_fraction).min(total.max(1));
    let step = step.min(total);
    if step < w {
        return base_lr * step as f64 / w as f64;
    }
    if total <= w {
        return base_lr;
    }
    let progress = (step - w) as f64 / (total - w) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_points() {
        assert_eq!(lr_schedule(0, 1000, 1.0, 0.05), 0.0);
        assert_eq!(warmup_steps(1000, 0.05), 50);
        assert_eq!(lr_schedule(50, 1000, 2.0, 0.05), 2.0);
        assert!((lr_schedule(525, 1000, 2.0, 0.05) - 1.0).abs() < 1e-12);
        assert!(lr_schedule(1000, 1000, 2.0, 0.05).abs() < 1e-15);
        assert_eq!(lr_schedule(25, 1000, 2.0, 0.05), 1.0);
    }
}
