use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-iteration KL weight, per-epoch learning rate and Gumbel temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Iteration at which the KL weight reaches 1.
    pub kl_anneal_iters: u64,
    pub kl_floor: f64,
    pub lr_half_start_epoch: usize,
    pub lr_half_every: usize,
    pub tau_start: f64,
    pub tau_min: f64,
    pub tau_decay: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            kl_anneal_iters: 10_000,
            kl_floor: 0.01,
            lr_half_start_epoch: 30,
            lr_half_every: 2,
            tau_start: 1.0,
            tau_min: 0.1,
            tau_decay: 3.0,
        }
    }
}

impl Schedule {
    /// `min(1, floor + (1 − floor) · iteration / T)`.
    pub fn kl_weight(&self, iteration: u64) -> Result<f64> {
        if self.kl_anneal_iters == 0 {
            return Err(Error::Config("KL annealing length must be positive".into()));
        }
        let w = self.kl_floor + (1.0 - self.kl_floor) * iteration as f64 / self.kl_anneal_iters as f64;
        Ok(w.min(1.0))
    }

    /// `base` before the halving epoch, then halved every `lr_half_every` epochs starting there.
    pub fn learning_rate(&self, epoch: usize, base: f64) -> f64 {
        if epoch < self.lr_half_start_epoch {
            return base;
        }
        let halvings = (epoch - self.lr_half_start_epoch) / self.lr_half_every.max(1) + 1;
        base * 0.5f64.powi(halvings as i32)
    }

    /// `max(tau_min, tau_start · exp(−decay · progress))` for progress in `[0, 1]`.
    pub fn tau(&self, progress: f64) -> f64 {
        (self.tau_start * (-self.tau_decay * progress.clamp(0.0, 1.0)).exp()).max(self.tau_min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_weight_endpoints() {
        let s = Schedule { kl_anneal_iters: 1000, ..Schedule::default() };
        assert_eq!(s.kl_weight(0).unwrap(), 0.01);
        assert_eq!(s.kl_weight(1000).unwrap(), 1.0);
        assert!((s.kl_weight(500).unwrap() - 0.505).abs() < 1e-15);
        assert_eq!(s.kl_weight(5000).unwrap(), 1.0);
        let bad = Schedule { kl_anneal_iters: 0, ..s };
        assert!(matches!(bad.kl_weight(1), Err(Error::Config(_))));
    }

    #[test]
    fn lr_halving() {
        let s = Schedule::default();
        assert_eq!(s.learning_rate(29, 1e-3), 1e-3);
        assert_eq!(s.learning_rate(30, 1e-3), 5e-4);
        assert_eq!(s.learning_rate(31, 1e-3), 5e-4);
        assert_eq!(s.learning_rate(34, 1e-3), 1.25e-4);
        for e in 0..60 {
            assert!(s.learning_rate(e + 1, 1e-3) <= s.learning_rate(e, 1e-3));
        }
    }

    #[test]
    fn tau_schedule() {
        let s = Schedule::default();
        assert_eq!(s.tau(0.0), 1.0);
        assert_eq!(s.tau(1.0), 0.1);
        assert!((s.tau(0.5) - (-1.5f64).exp()).abs() < 1e-15);
    }
}
