//! Glue between the library crates, shared by the commands and the
//! acceptance harness.

use ps_core::{IdentityLabel, ImageBuf, PersonCrop};
use ps_data::{generate_toy_dataset, load_annotations, AnnotatedFrame, Dataset, ToyOracle};
use ps_detect::{filter_by_confidence, match_to_ground_truth, nms, DetectionSource, DetectorConfig, FileDetections, GroundTruthDetector, ToyDetector};
use ps_eval::{evaluate, EvalReport, GalleryIndex, SearchConfig};
use ps_reid::{LossReport, ReidModel, TeacherConfig, TeacherModel, TrainConfig, TrainData, Trainer};
use ps_synthgan::{GanProfile, SynthGan};

use crate::config::{RunConfig, SourceConfig, SourceKind};
use crate::Result;

/// The dataset of a run, plus the toy oracle when it was generated here.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, Option<ToyOracle>)> {
    match &cfg.data.manifest {
        Some(path) => Ok((load_annotations(path)?, None)),
        None => {
            let toy = generate_toy_dataset(&cfg.data.toy)?;
            Ok((toy.dataset, Some(toy.oracle)))
        }
    }
}

pub fn detector(src: &SourceConfig, seed: u64) -> Result<Box<dyn DetectionSource>> {
    Ok(match src.kind {
        SourceKind::GroundTruth => Box::new(GroundTruthDetector { jitter: src.jitter, seed }),
        SourceKind::Toy => Box::new(ToyDetector { min_area: src.min_area, proposals_per_person: src.proposals_per_person, seed, ..ToyDetector::default() }),
        SourceKind::File => Box::new(FileDetections::load(src.file.as_deref().expect("validated"))?),
    })
}

/// Ground-truth crops of every person in the frames, passers-by included.
pub fn ground_truth_crops(frames: &[&AnnotatedFrame], profile: &GanProfile) -> Result<Vec<PersonCrop<f32>>> {
    let mut out = Vec::new();
    for f in frames {
        out.extend(f.crops(profile.crop_h, profile.crop_w)?);
    }
    Ok(out)
}

/// AIDQ crop extraction: confidence filter, suppression, one-to-one matching
/// to ground truth. Detections matched to a labeled person keep that label;
/// every other surviving detection becomes an unlabeled crop.
pub fn detection_crops(frames: &[&AnnotatedFrame], source: &dyn DetectionSource, dcfg: &DetectorConfig, profile: &GanProfile) -> Result<Vec<PersonCrop<f32>>> {
    let mut out = Vec::new();
    for f in frames {
        let dets = source.detect(f)?;
        let kept = nms(&filter_by_confidence(&dets, dcfg.confidence_threshold as f32), dcfg.nms_iou_threshold as f32);
        for (d, label) in match_to_ground_truth(&kept, &f.ground_truth, dcfg.gt_match_iou_threshold as f32) {
            out.push(PersonCrop {
                pixels: ps_core::crop_and_resize(&f.scene.pixels, &d.bbox, profile.crop_h, profile.crop_w)?,
                identity: label.unwrap_or(IdentityLabel::Unlabeled),
                source: f.id().to_string(),
            });
        }
    }
    Ok(out)
}

pub fn train_teacher(crops: &[PersonCrop<f32>], num_classes: usize, cfg: &TeacherConfig) -> Result<TeacherModel<f32>> {
    Ok(TeacherModel::train(crops, num_classes, cfg)?)
}

/// A fresh trainer over `crops`.
pub fn new_trainer(profile: GanProfile, crops: Vec<PersonCrop<f32>>, num_classes: usize, teacher: Option<TeacherModel<f32>>, cfg: TrainConfig) -> Result<Trainer<f32>> {
    let gan = SynthGan::new(profile, cfg.seed)?;
    let model = ReidModel::new(gan, num_classes, cfg.seed);
    Ok(Trainer::new(model, teacher, TrainData::new(crops, num_classes)?, cfg)?)
}

/// Trains for `steps` and returns every step's report.
pub fn train(trainer: &mut Trainer<f32>, steps: u64) -> Result<Vec<LossReport>> {
    let mut reports = Vec::with_capacity(steps as usize);
    trainer.run(steps, |_, r| {
        reports.push(*r);
        Ok(())
    })?;
    Ok(reports)
}

/// Embedder trained on AIDQ crops of the training frames, with the run's
/// detector and thresholds.
pub fn train_detect_model(cfg: &RunConfig, dataset: &Dataset, steps: u64) -> Result<Trainer<f32>> {
    let profile = cfg.gan_profile()?;
    let source = detector(&cfg.source, cfg.seed)?;
    let crops = detection_crops(&dataset.train_frames(), source.as_ref(), &cfg.detector, &profile)?;
    let mut t = new_trainer(profile, crops, dataset.num_identities, None, cfg.detect_train_config())?;
    train(&mut t, steps)?;
    Ok(t)
}

/// Index over every held-out frame, so protocols can be redrawn freely.
pub fn test_index(dataset: &Dataset, source: &dyn DetectionSource, embedder: &dyn ps_eval::Embedder) -> Result<GalleryIndex> {
    let frames: Vec<&AnnotatedFrame> = dataset.test_frame_ids().into_iter().filter_map(|id| dataset.frame(id)).collect();
    Ok(GalleryIndex::build(frames, source, embedder)?)
}

/// The dataset's own protocol, evaluated with the run's detector.
pub fn evaluate_model(dataset: &Dataset, model: &ReidModel<f32>, source: &dyn DetectionSource, search: &SearchConfig) -> Result<EvalReport> {
    let index = GalleryIndex::for_protocol(dataset, &dataset.protocol, source, model)?;
    Ok(evaluate(dataset, &dataset.protocol, &index, model, search)?)
}

/// One crop per identity for a synthesis grid: the first labeled training
/// crop of each of the first `n` identities.
pub fn grid_sources(dataset: &Dataset, profile: &GanProfile, n: usize) -> Result<Vec<PersonCrop<f32>>> {
    let mut picked: Vec<Option<PersonCrop<f32>>> = vec![None; n];
    for f in dataset.train_frames() {
        for c in f.labeled_crops(profile.crop_h, profile.crop_w)? {
            if let Some(k) = c.identity.class_index().filter(|&k| k < n) {
                picked[k].get_or_insert(c);
            }
        }
    }
    picked
        .into_iter()
        .enumerate()
        .map(|(k, c)| c.ok_or_else(|| crate::CliError::Config(format!("identity {} has no training crop for the grid", k + 1))))
        .collect()
}

/// `(n+1) x (n+1)` tiles: the top row holds appearance providers, the left
/// column structure providers, and tile `(row j, column i)` is `x_ji`, the
/// structure of `j` dressed in the appearance of `i`.
pub fn synthesis_grid(model: &ReidModel<f32>, sources: &[PersonCrop<f32>]) -> Result<ImageBuf<f32>> {
    let n = sources.len();
    let (h, w) = (model.gan.profile.crop_h, model.gan.profile.crop_w);
    let mut grid = ImageBuf::filled(3, (n + 1) * h, (n + 1) * w, 1.0f32);
    let mut put = |img: &ImageBuf<f32>, row: usize, col: usize| {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    grid.set(c, row * h + y, col * w + x, img.get(c, y, x));
                }
            }
        }
    };
    for (k, s) in sources.iter().enumerate() {
        put(&s.pixels, 0, k + 1);
        put(&s.pixels, k + 1, 0);
    }
    for (j, st) in sources.iter().enumerate() {
        for (i, app) in sources.iter().enumerate() {
            let x = model.gan.synthesize(app, st)?;
            put(&x.pixels, j + 1, i + 1);
        }
    }
    Ok(grid)
}
