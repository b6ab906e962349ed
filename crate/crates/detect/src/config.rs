use serde::{Deserialize, Serialize};

use crate::{DetectError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub confidence_threshold: f64,
    pub nms_iou_threshold: f64,
    pub gt_match_iou_threshold: f64,
    /// Softmax temperature of the identity loss.
    pub temperature: f64,
    /// Target share of the total negative similarity covered by the selected hard negatives.
    pub hard_negative_ratio: f64,
    /// Memory momentum.
    pub momentum: f64,
    /// Cosine similarity below which an unlabeled sample spawns a new center.
    pub new_center_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::cuhk()
    }
}

impl DetectorConfig {
    pub fn cuhk() -> Self {
        DetectorConfig {
            confidence_threshold: 0.5,
            nms_iou_threshold: 0.5,
            gt_match_iou_threshold: 0.6,
            temperature: 0.1,
            hard_negative_ratio: 0.6,
            momentum: 0.5,
            new_center_threshold: 0.5,
        }
    }

    pub fn prw() -> Self {
        DetectorConfig { nms_iou_threshold: 0.6, gt_match_iou_threshold: 0.5, ..Self::cuhk() }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "cuhk" => Ok(Self::cuhk()),
            "prw" => Ok(Self::prw()),
            other => Err(DetectError::UnknownProfile(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("confidence_threshold", self.confidence_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
            ("gt_match_iou_threshold", self.gt_match_iou_threshold),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(DetectError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DetectError::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.hard_negative_ratio > 0.0 && self.hard_negative_ratio <= 1.0) {
            return Err(DetectError::Config(format!("hard_negative_ratio = {} outside (0, 1]", self.hard_negative_ratio)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(DetectError::Config(format!("momentum = {} outside (0, 1)", self.momentum)));
        }
        if !(self.new_center_threshold > -1.0 && self.new_center_threshold < 1.0) {
            return Err(DetectError::Config(format!("new_center_threshold = {} outside (-1, 1)", self.new_center_threshold)));
        }
        Ok(())
    }
}
