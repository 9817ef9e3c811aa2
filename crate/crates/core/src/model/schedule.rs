use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Linear warm-up followed by step decay at milestones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    /// Epochs at which the learning rate drops, strictly increasing.
    pub milestones: Vec<usize>,
    /// Multiplier of `base_lr` from the matching milestone on.
    pub factors: Vec<f64>,
    pub total_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_lr: 3.5e-4,
            warmup_epochs: 10,
            milestones: vec![80, 180],
            factors: vec![0.1, 0.01],
            total_epochs: 250,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid("schedule.base_lr", "must be positive"));
        }
        if self.milestones.len() != self.factors.len() {
            return Err(invalid("schedule.factors", "need one factor per milestone"));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("schedule.milestones", "must be strictly increasing"));
        }
        if self.factors.iter().any(|&f| f.is_nan() || f <= 0.0) {
            return Err(invalid("schedule.factors", "must be positive"));
        }
        if self.total_epochs == 0 {
            return Err(invalid("schedule.total_epochs", "must be positive"));
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch. During warm-up the rate rises
    /// linearly from `base_lr / warmup_epochs` (epoch 0) to `base_lr`.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        let mut lr = self.base_lr;
        if epoch < self.warmup_epochs {
            lr *= (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        if let Some(i) = self.milestones.iter().rposition(|&m| epoch >= m) {
            lr *= self.factors[i];
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-15 * b.abs().max(1.0)
    }

    #[test]
    fn step_decay_values() {
        let s = ScheduleConfig::default();
        assert!(close(s.lr_at(100).unwrap(), 3.5e-5));
        assert!(close(s.lr_at(200).unwrap(), 3.5e-6));
        assert!(close(s.lr_at(0).unwrap(), 3.5e-5));
        assert!(close(s.lr_at(9).unwrap(), 3.5e-4));
        assert!(close(s.lr_at(79).unwrap(), 3.5e-4));
        assert!(s.lr_at(250).is_err());
    }

    #[test]
    fn rejects_bad_milestones() {
        let s = ScheduleConfig {
            milestones: vec![80, 80],
            ..ScheduleConfig::default()
        };
        assert!(s.validate().is_err());
        let s = ScheduleConfig {
            factors: vec![0.1, -1.0],
            ..ScheduleConfig::default()
        };
        assert!(s.validate().is_err());
    }
}
