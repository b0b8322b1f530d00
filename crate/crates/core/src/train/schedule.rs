//! Warmup then step-decay learning rate.

use crate::error::{Error, Result};

/// Linear warmup to a plateau, then two ×0.1 steps.
///
/// Epoch boundaries are stored already scaled so that `scale = 1` evaluates
/// the full 150-epoch schedule exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub warmup_start: f64,
    pub warmup_epochs: f64,
    /// `(last epoch of the plateau, learning rate)`; each plateau starts just
    /// after the previous one ends.
    pub plateaus: [(f64, f64); 3],
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { warmup_start: 3e-6, warmup_epochs: 20.0, plateaus: [(80.0, 3.5e-4), (130.0, 3.5e-5), (150.0, 3.5e-6)] }
    }
}

impl LrSchedule {
    /// The default schedule with every epoch boundary multiplied by `scale`.
    pub fn scaled(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config("schedule scale must be positive".into()));
        }
        let mut s = Self::default();
        s.warmup_epochs *= scale;
        for p in &mut s.plateaus {
            p.0 *= scale;
        }
        Ok(s)
    }

    pub fn base_lr(&self) -> f64 {
        self.plateaus[0].1
    }

    pub fn total_epochs(&self) -> f64 {
        self.plateaus[2].0
    }

    pub fn lr_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.total_epochs()).contains(&t) {
            return Err(Error::Contract(alloc::format!("epoch {t} outside the schedule [0, {}]", self.total_epochs())));
        }
        if t <= self.warmup_epochs {
            return Ok(self.warmup_start + (self.base_lr() - self.warmup_start) / self.warmup_epochs * t);
        }
        Ok(self.plateaus.iter().find(|(end, _)| t <= *end).map(|p| p.1).unwrap_or(self.plateaus[2].1))
    }
}

/// Learning rate at epoch `t` of the full-length schedule.
pub fn lr_at(t: f64) -> Result<f64> {
    LrSchedule::default().lr_at(t)
}
