use std::path::{Path, PathBuf};

use ps_data::ToySpec;
use ps_detect::DetectorConfig;
use ps_eval::SearchConfig;
use ps_reid::{LossWeights, OptimConfig, RealLoss, TeacherConfig, TrainConfig};
use ps_synthgan::GanProfile;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest to load; when absent the toy world in `toy` is generated in memory.
    pub manifest: Option<PathBuf>,
    pub toy: ToySpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { manifest: None, toy: ToySpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    GroundTruth,
    Toy,
    File,
}

/// Where detections come from at training and evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    /// Ground-truth box jitter, as a fraction of box size.
    pub jitter: f32,
    pub file: Option<PathBuf>,
    pub min_area: usize,
    pub proposals_per_person: usize,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig { kind: SourceKind::GroundTruth, jitter: 0.0, file: None, min_area: 40, proposals_per_person: 0 }
    }
}

/// Joint-training options. Memory hyperparameters live in `[detector]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub weights: LossWeights,
    pub real_loss: RealLoss,
    pub optim: OptimConfig,
    pub pairs: usize,
    pub unlabeled_per_step: usize,
    /// Joint generator and student steps of `train-gan`.
    pub gan_steps: u64,
    /// Embedder steps of `train-detect` and of each retrained sweep point.
    pub detect_steps: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            weights: t.weights,
            real_loss: t.real_loss,
            optim: t.optim,
            pairs: t.pairs,
            unlabeled_per_step: t.unlabeled_per_step,
            gan_steps: 10_000,
            detect_steps: 600,
            checkpoint_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub match_iou: f32,
    /// `gallery_size`, `lambda` or `iou_threshold`.
    pub axis: String,
    pub gallery_sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub iou_thresholds: Vec<f64>,
    pub repetitions: usize,
    pub n_queries: usize,
    /// Identities shown by `synthesize`.
    pub n_ids: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            match_iou: 0.5,
            axis: "gallery_size".into(),
            gallery_sizes: vec![5, 10, 20],
            lambdas: ps_eval::SweepAxis::lambda_grid(),
            iou_thresholds: vec![0.4, 0.5, 0.6, 0.7],
            repetitions: 5,
            n_queries: 64,
            n_ids: 4,
        }
    }
}

/// Everything a command needs. Unknown keys are rejected; `seed` is the only
/// source of randomness and is copied into every sub-config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// `toy`, `full`, `cuhk` or `prw`.
    pub profile: String,
    pub data: DataConfig,
    pub detector: DetectorConfig,
    pub source: SourceConfig,
    pub train: TrainSection,
    pub teacher: TeacherConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            profile: "toy".into(),
            data: DataConfig::default(),
            detector: DetectorConfig::default(),
            source: SourceConfig::default(),
            train: TrainSection::default(),
            teacher: TeacherConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `--seed` and `--profile`. A profile switch resets the detector
    /// thresholds to that profile's pair.
    pub fn with_overrides(mut self, seed: Option<u64>, profile: Option<&str>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(p) = profile {
            self.profile = p.to_string();
            match p {
                "cuhk" | "prw" => {
                    let preset = DetectorConfig::profile(p)?;
                    self.detector.nms_iou_threshold = preset.nms_iou_threshold;
                    self.detector.gt_match_iou_threshold = preset.gt_match_iou_threshold;
                }
                "toy" | "full" => {}
                other => return Err(CliError::Config(format!("unknown profile {other:?} (toy, full, cuhk, prw)"))),
            }
        }
        self.data.toy.seed = self.seed;
        self.teacher.seed = self.seed;
        Ok(self)
    }

    /// Network shapes: the toy profile for `toy`, the full one otherwise.
    pub fn gan_profile(&self) -> Result<GanProfile> {
        match self.profile.as_str() {
            "toy" => Ok(GanProfile::toy()),
            "full" | "cuhk" | "prw" => Ok(GanProfile::full()),
            other => Err(CliError::Config(format!("unknown profile {other:?} (toy, full, cuhk, prw)"))),
        }
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig { match_iou: self.eval.match_iou }
    }

    /// Trainer options for joint training with this run's memory settings.
    pub fn train_config(&self) -> TrainConfig {
        let (t, d) = (&self.train, &self.detector);
        TrainConfig {
            weights: t.weights,
            real_loss: t.real_loss,
            optim: t.optim,
            pairs: t.pairs,
            temperature: d.temperature,
            hard_negative_ratio: d.hard_negative_ratio,
            momentum: d.momentum,
            new_center_threshold: d.new_center_threshold,
            unlabeled_per_step: t.unlabeled_per_step,
            seed: self.seed,
        }
    }

    /// Trainer options for the embedder alone: the real-crop loss only.
    pub fn detect_train_config(&self) -> TrainConfig {
        TrainConfig { weights: LossWeights::real_only(), ..self.train_config() }
    }

    /// Checks every section before any command does work.
    pub fn validate(&self) -> Result<()> {
        self.gan_profile()?.validate()?;
        if self.data.manifest.is_none() {
            self.data.toy.validate()?;
        }
        self.detector.validate()?;
        self.train_config().validate()?;
        let s = &self.source;
        if !(0.0..1.0).contains(&s.jitter) {
            return Err(CliError::Config(format!("source.jitter = {} outside [0, 1)", s.jitter)));
        }
        if s.kind == SourceKind::File && s.file.is_none() {
            return Err(CliError::Config("source.kind = \"file\" needs source.file".into()));
        }
        if self.train.checkpoint_every == 0 {
            return Err(CliError::Config("train.checkpoint_every must be positive".into()));
        }
        let e = &self.eval;
        if !(e.match_iou > 0.0 && e.match_iou <= 1.0) {
            return Err(CliError::Config(format!("eval.match_iou = {} outside (0, 1]", e.match_iou)));
        }
        let axis = ps_eval::SweepAxis::parse(&e.axis)?;
        for &g in &e.gallery_sizes {
            axis_check(ps_eval::SweepAxis::GallerySize, g as f64)?;
        }
        for &l in &e.lambdas {
            axis_check(ps_eval::SweepAxis::Lambda, l)?;
        }
        for &t in &e.iou_thresholds {
            axis_check(ps_eval::SweepAxis::IouThreshold, t)?;
        }
        if self.data.manifest.is_none() && axis == ps_eval::SweepAxis::GallerySize {
            if let Some(&g) = e.gallery_sizes.iter().find(|&&g| g >= self.data.toy.test_frames) {
                return Err(CliError::Config(format!("gallery size {g} needs more than {} test frames", self.data.toy.test_frames)));
            }
        }
        let n_values = match axis {
            ps_eval::SweepAxis::GallerySize => e.gallery_sizes.len(),
            ps_eval::SweepAxis::Lambda => e.lambdas.len(),
            ps_eval::SweepAxis::IouThreshold => e.iou_thresholds.len(),
        };
        if n_values == 0 || e.repetitions == 0 || e.n_queries == 0 || e.n_ids == 0 {
            return Err(CliError::Config("eval needs axis values, repetitions, queries and identities".into()));
        }
        if self.teacher.steps == 0 || self.teacher.batch == 0 {
            return Err(CliError::Config("teacher.steps and teacher.batch must be positive".into()));
        }
        Ok(())
    }
}

fn axis_check(axis: ps_eval::SweepAxis, v: f64) -> Result<()> {
    axis.check(v).map_err(CliError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nsteps = 3").is_err());
    }

    #[test]
    fn profile_presets_threshold_pairs() {
        let c = RunConfig::default().with_overrides(Some(7), Some("prw")).unwrap();
        assert_eq!((c.detector.nms_iou_threshold, c.detector.gt_match_iou_threshold), (0.6, 0.5));
        assert_eq!((c.data.toy.seed, c.teacher.seed, c.train_config().seed), (7, 7, 7));
        assert!(RunConfig::default().with_overrides(None, Some("coco")).is_err());
    }

    #[test]
    fn out_of_range_values_fail_fast() {
        let mut c = RunConfig::default();
        c.eval.lambdas = vec![1.5];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.detector.hard_negative_ratio = 0.0;
        assert!(c.validate().is_err());
    }
}
