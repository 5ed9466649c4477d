//! Linear warmup followed by half-cosine decay to zero.

use alloc::format;

use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupCosine {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupCosine {
    pub fn new(base_lr: f64, warmup_steps: usize, total_steps: usize) -> Result<Self> {
        if !(base_lr > 0.0) || !base_lr.is_finite() {
            return Err(Error::parameter(format!(
                "base learning rate must be positive, got {base_lr}"
            )));
        }
        if total_steps == 0 || warmup_steps >= total_steps {
            return Err(Error::parameter(format!(
                "warmup ({warmup_steps}) must be shorter than the run ({total_steps} steps)"
            )));
        }
        Ok(WarmupCosine {
            base_lr,
            warmup_steps,
            total_steps,
        })
    }

    /// Learning rate at `step`, `0 ≤ step ≤ total_steps`.
    pub fn lr(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::parameter(format!(
                "step {step} is past the end of the schedule ({} steps)",
                self.total_steps
            )));
        }
        if step < self.warmup_steps {
            return Ok(self.base_lr * step as f64 / self.warmup_steps as f64);
        }
        let progress = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        Ok(0.5 * self.base_lr * (1.0 + Float::cos(core::f64::consts::PI * progress)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_peak_midpoint_end() {
        let s = WarmupCosine::new(0.001, 100, 1100).unwrap();
        assert_eq!(s.lr(0).unwrap(), 0.0);
        assert_eq!(s.lr(50).unwrap(), 0.0005);
        assert_eq!(s.lr(100).unwrap(), 0.001);
        assert!((s.lr(600).unwrap() - 0.0005).abs() < 1e-9);
        assert!(s.lr(1100).unwrap().abs() < 1e-18);
        assert!(s.lr(1101).is_err());
    }

    #[test]
    fn no_warmup_starts_at_base() {
        let s = WarmupCosine::new(0.01, 0, 10).unwrap();
        assert_eq!(s.lr(0).unwrap(), 0.01);
    }

    #[test]
    fn monotone_after_warmup() {
        let s = WarmupCosine::new(0.001, 7, 200).unwrap();
        let lrs: Vec<f64> = (7..=200).map(|t| s.lr(t).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn invalid_configs() {
        assert!(WarmupCosine::new(0.001, 10, 10).is_err());
        assert!(WarmupCosine::new(0.0, 0, 10).is_err());
        assert!(WarmupCosine::new(0.001, 0, 0).is_err());
    }
}
