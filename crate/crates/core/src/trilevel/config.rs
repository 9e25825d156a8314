use alloc::format;

use crate::error::{Error, Result};
use crate::reweight::ReweightConfig;

/// Whether the architecture update includes the finite-difference terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Order {
    First,
    #[default]
    Second,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub lr_w1: f64,
    pub lr_w2: f64,
    pub lr_a: f64,
    pub lr_v: f64,
    pub lr_r: f64,
    /// Heavy-ball momentum for the A, V and r updates (0 = plain SGD).
    pub momentum: f64,
    /// Cosine decay of every rate to zero over the run.
    pub cosine_decay: bool,
    /// `c` in `eps = c / |direction|`.
    pub eps_scale: f64,
    pub order: Order,
    pub batch_train: usize,
    pub batch_val: usize,
    pub epochs: usize,
    pub reweight: ReweightConfig,
    /// Operations kept per edge when discretizing.
    pub k: usize,
    pub seed: u64,
    /// Sum the weighted Stage-II loss instead of averaging it.
    pub weighted_sum: bool,
    /// Include the architecture's influence on the validation losses `u`.
    pub u_path: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lr_w1: 0.1,
            lr_w2: 0.1,
            lr_a: 1.0,
            lr_v: 0.05,
            lr_r: 5.0,
            momentum: 0.0,
            cosine_decay: false,
            eps_scale: 0.01,
            order: Order::Second,
            batch_train: 32,
            batch_val: 8,
            epochs: 10,
            reweight: ReweightConfig::default(),
            k: 1,
            seed: 0,
            weighted_sum: false,
            u_path: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_w1", self.lr_w1),
            ("lr_w2", self.lr_w2),
            ("lr_a", self.lr_a),
            ("lr_v", self.lr_v),
            ("lr_r", self.lr_r),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.order == Order::Second && !(self.eps_scale.is_finite() && self.eps_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("eps_scale must be positive, got {}", self.eps_scale)));
        }
        if self.batch_train == 0 || self.batch_val == 0 {
            return Err(Error::InvalidConfig("batch sizes must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }

    /// Copy with every rate scaled by the schedule at `step` of `total`.
    pub fn at_step(&self, step: u64, total: u64) -> SearchConfig {
        let mut c = self.clone();
        if self.cosine_decay && total > 0 {
            let f = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * step as f64 / total as f64));
            c.lr_w1 *= f;
            c.lr_w2 *= f;
            c.lr_a *= f;
            c.lr_v *= f;
            c.lr_r *= f;
        }
        c
    }
}
