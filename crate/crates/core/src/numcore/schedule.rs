use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Linear warmup to `lr_max`, then inverse-square-root decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn new(lr_max: f64, warmup_steps: u64) -> Result<Self> {
        ensure!(lr_max > 0.0, Contract, "lr_max must be positive, got {lr_max}");
        ensure!(warmup_steps > 0, Contract, "warmup_steps must be positive");
        Ok(Self {
            lr_max,
            warmup_steps,
        })
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        lr_at(self, step)
    }
}

pub fn lr_at(schedule: &LrSchedule, step: u64) -> Result<f64> {
    ensure!(step >= 1, Contract, "learning-rate steps start at 1");
    let (s, w) = (step as f64, schedule.warmup_steps as f64);
    Ok(schedule.lr_max * (s / w).min((w / s).sqrt()))
}
