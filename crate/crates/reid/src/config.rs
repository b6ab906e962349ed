use serde::{Deserialize, Serialize};

use crate::{ReidError, Result};

/// Coefficients of the joint objective. A zero weight skips the term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub id: f64,
    pub adv: f64,
    pub kl: f64,
    pub loc: f64,
    pub prim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { recon: 5.0, id: 1.0, adv: 1.0, kl: 1.0, loc: 0.5, prim: 1.0 }
    }
}

impl LossWeights {
    /// Only the real-image term.
    pub fn real_only() -> Self {
        LossWeights { recon: 0.0, id: 0.0, adv: 0.0, kl: 0.0, loc: 0.0, prim: 1.0 }
    }

    /// True when any term needs synthetic images.
    pub fn uses_synthesis(&self) -> bool {
        self.recon != 0.0 || self.id != 0.0 || self.adv != 0.0 || self.kl != 0.0 || self.loc != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("recon", self.recon), ("id", self.id), ("adv", self.adv), ("kl", self.kl), ("loc", self.loc), ("prim", self.prim)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(ReidError::Config(format!("loss weight {name} = {w} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Loss applied to real crops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RealLoss {
    /// Softmax classifier over identities.
    Ce,
    /// Memory bank of labeled centers, every negative.
    Oim,
    /// Memory bank with unlabeled centers and adaptive hard negatives.
    Aidq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Appearance encoder: SGD with momentum.
    pub app_lr: f64,
    pub app_momentum: f64,
    /// Generator, structure encoder and student heads: Adam.
    pub adam_lr: f64,
    /// Discriminator: Adam with the same moments.
    pub disc_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Global gradient-norm cap per parameter group; 0 disables.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { app_lr: 0.003, app_momentum: 0.9, adam_lr: 1e-4, disc_lr: 1e-3, adam_beta1: 0.0, adam_beta2: 0.999, clip_norm: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub real_loss: RealLoss,
    pub optim: OptimConfig,
    /// Pairs per step; every step sees `2 * pairs` real crops.
    pub pairs: usize,
    pub temperature: f64,
    pub hard_negative_ratio: f64,
    pub momentum: f64,
    pub new_center_threshold: f64,
    /// Unlabeled crops embedded per step to grow the unlabeled centers.
    pub unlabeled_per_step: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            real_loss: RealLoss::Aidq,
            optim: OptimConfig::default(),
            pairs: 4,
            temperature: 0.1,
            hard_negative_ratio: 0.6,
            momentum: 0.5,
            new_center_threshold: 0.5,
            unlabeled_per_step: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let o = &self.optim;
        let positive = [("app_lr", o.app_lr), ("adam_lr", o.adam_lr), ("disc_lr", o.disc_lr), ("temperature", self.temperature)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ReidError::Config(format!("{name} = {v} must be positive")));
            }
        }
        let unit = [
            ("app_momentum", o.app_momentum),
            ("adam_beta1", o.adam_beta1),
            ("adam_beta2", o.adam_beta2),
            ("momentum", self.momentum),
        ];
        for (name, v) in unit {
            if !(0.0..1.0).contains(&v) {
                return Err(ReidError::Config(format!("{name} = {v} outside [0, 1)")));
            }
        }
        if !(self.hard_negative_ratio > 0.0 && self.hard_negative_ratio <= 1.0) {
            return Err(ReidError::Config(format!("hard_negative_ratio = {} outside (0, 1]", self.hard_negative_ratio)));
        }
        if !(-1.0..=1.0).contains(&self.new_center_threshold) {
            return Err(ReidError::Config(format!("new_center_threshold = {} outside [-1, 1]", self.new_center_threshold)));
        }
        if !(o.clip_norm >= 0.0 && o.clip_norm.is_finite()) {
            return Err(ReidError::Config(format!("clip_norm = {} must be non-negative", o.clip_norm)));
        }
        if self.pairs == 0 {
            return Err(ReidError::Config("pairs must be at least 1".into()));
        }
        Ok(())
    }
}
