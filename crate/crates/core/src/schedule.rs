//! Learning-rate and sparsity schedules.

use serde::{Deserialize, Serialize};

/// Cosine annealing with warm restarts.
///
/// Within a period of `period` epochs the rate decays from `eta_max` to
/// `eta_min` along a half cosine; at each restart the period length is
/// multiplied by `restart_mult` (rounded to whole epochs, at least 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    #[serde(default = "default_eta_max")]
    pub eta_max: f64,
    #[serde(default)]
    pub eta_min: f64,
    #[serde(default = "default_period")]
    pub period: u64,
    #[serde(default = "default_restart_mult")]
    pub restart_mult: f64,
}

fn default_eta_max() -> f64 {
    0.01
}

fn default_period() -> u64 {
    10
}

fn default_restart_mult() -> f64 {
    1.0
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            eta_max: default_eta_max(),
            eta_min: 0.0,
            period: default_period(),
            restart_mult: default_restart_mult(),
        }
    }
}

impl LrSchedule {
    /// Learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        let (t_cur, t_i) = self.position(epoch);
        self.eta_min
            + 0.5
                * (self.eta_max - self.eta_min)
                * (1.0 + (std::f64::consts::PI * t_cur as f64 / t_i as f64).cos())
    }

    /// (epochs since last restart, current period length).
    fn position(&self, epoch: u64) -> (u64, u64) {
        let mut remaining = epoch;
        let mut period_f = self.period as f64;
        loop {
            let period = (period_f.round() as u64).max(1);
            if remaining < period {
                return (remaining, period);
            }
            remaining -= period;
            period_f *= self.restart_mult;
        }
    }
}

/// Rising sparsity targets for the fine-tuning phase.
///
/// Stage k uses `t_start + k * t_step`; generation stops once the value
/// reaches `t_end` (strict, with a 1e-12 guard against accumulated float
/// dust). Each stage runs `epochs_per_stage` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    #[serde(default = "default_t_start")]
    pub t_start: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_t_step")]
    pub t_step: f64,
    #[serde(default = "default_epochs_per_stage")]
    pub epochs_per_stage: u64,
}

fn default_t_start() -> f64 {
    0.3
}

fn default_t_end() -> f64 {
    0.7
}

fn default_t_step() -> f64 {
    0.04
}

fn default_epochs_per_stage() -> u64 {
    10
}

impl Default for SparsitySchedule {
    fn default() -> Self {
        SparsitySchedule {
            t_start: default_t_start(),
            t_end: default_t_end(),
            t_step: default_t_step(),
            epochs_per_stage: default_epochs_per_stage(),
        }
    }
}

impl SparsitySchedule {
    /// Validates the invariants 0 < t_start <= t_end < 1 and t_step > 0.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_start > 0.0 && self.t_start <= self.t_end && self.t_end < 1.0) {
            return Err(format!(
                "sparsity schedule requires 0 < t_start <= t_end < 1, got {} .. {}",
                self.t_start, self.t_end
            ));
        }
        if self.t_step <= 0.0 {
            return Err(format!("t_step must be positive, got {}", self.t_step));
        }
        if self.epochs_per_stage == 0 {
            return Err("epochs_per_stage must be positive".to_string());
        }
        Ok(())
    }

    /// The stage targets, in order.
    pub fn stages(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0u32;
        loop {
            let t = self.t_start + f64::from(k) * self.t_step;
            if t >= self.t_end - 1e-12 {
                break;
            }
            out.push(t);
            k += 1;
        }
        out
    }

    /// Total number of fine-tuning epochs.
    pub fn total_epochs(&self) -> u64 {
        self.stages().len() as u64 * self.epochs_per_stage
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_at_restart_is_eta_max() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at(0), 0.01);
        assert_eq!(s.lr_at(10), 0.01);
        assert_eq!(s.lr_at(20), 0.01);
    }

    #[test]
    fn lr_midpoint() {
        let s = LrSchedule {
            eta_max: 0.01,
            eta_min: 0.0,
            period: 10,
            restart_mult: 1.0,
        };
        assert!((s.lr_at(5) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn lr_bounded_for_all_epochs() {
        let s = LrSchedule {
            eta_max: 0.1,
            eta_min: 0.001,
            period: 7,
            restart_mult: 1.5,
        };
        for e in 0..500 {
            let lr = s.lr_at(e);
            assert!(
                lr >= s.eta_min - 1e-15 && lr <= s.eta_max + 1e-15,
                "epoch {e}: lr {lr}"
            );
        }
    }

    #[test]
    fn lr_growing_periods() {
        let s = LrSchedule {
            eta_max: 1.0,
            eta_min: 0.0,
            period: 4,
            restart_mult: 2.0,
        };
        // periods 4, 8, 16: restarts at epochs 0, 4, 12, 28
        for e in [0, 4, 12, 28] {
            assert!((s.lr_at(e) - 1.0).abs() < 1e-15, "epoch {e}");
        }
    }

    #[test]
    fn default_stage_sequence() {
        let s = SparsitySchedule::default();
        let stages = s.stages();
        assert_eq!(stages.len(), 10);
        assert!((stages[0] - 0.30).abs() < 1e-12);
        assert!((stages[1] - 0.34).abs() < 1e-12);
        assert!((stages[9] - 0.66).abs() < 1e-12);
    }

    #[test]
    fn empty_schedule_when_start_equals_end() {
        let s = SparsitySchedule {
            t_start: 0.5,
            t_end: 0.5,
            ..Default::default()
        };
        assert!(s.stages().is_empty());
        assert_eq!(s.total_epochs(), 0);
    }
}
