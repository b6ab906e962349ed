use std::fs;
use std::path::{Path, PathBuf};

use ps_data::save_annotations;
use ps_eval::{gallery_sweep, repetition_seed, EvalReport, SweepAxis, SweepReport};
use ps_reid::{load_model, LossReport, ReidError, TrainData, TrainLog, Trainer};
use serde::Serialize;

use crate::config::RunConfig;
use crate::pipeline::{self, detector, load_dataset};
use crate::{CliError, Result};

/// Output layout under `--out`.
#[derive(Debug, Clone)]
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub const CONFIG_ECHO: &'static str = "config.toml";

    /// Creates the layout and echoes the effective config. A non-empty
    /// directory is refused unless `force` (or `reuse`, for resuming).
    pub fn prepare(root: &Path, cfg: &RunConfig, force: bool, reuse: bool) -> Result<Self> {
        if root.exists() && !force && !reuse && fs::read_dir(root)?.next().is_some() {
            return Err(CliError::OutputNotEmpty(root.to_path_buf()));
        }
        for sub in ["checkpoints", "logs", "reports", "grids"] {
            fs::create_dir_all(root.join(sub))?;
        }
        fs::write(root.join(Self::CONFIG_ECHO), cfg.to_toml())?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn grids(&self) -> PathBuf {
        self.root.join("grids")
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSummary {
    pub identities: usize,
    pub frames: usize,
    pub boxes: usize,
    pub test_frames: usize,
    pub queries: usize,
}

/// Writes the toy dataset (manifest, PNGs, oracle) under `out/data`.
pub fn gen_data(cfg: &RunConfig, out: &OutDir) -> Result<DataSummary> {
    let toy = ps_data::generate_toy_dataset(&cfg.data.toy)?;
    let dir = out.root.join("data");
    save_annotations(&toy.dataset, &dir)?;
    write_json(&dir.join("toy_oracle.json"), &toy.oracle)?;
    let ds = &toy.dataset;
    let summary = DataSummary {
        identities: ds.num_identities,
        frames: ds.frames.len(),
        boxes: ds.num_boxes(),
        test_frames: ds.test_frame_ids().len(),
        queries: ds.protocol.queries.len(),
    };
    write_json(&out.reports().join("gen-data.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_report: LossReport,
    pub checkpoint: PathBuf,
}

/// Runs `trainer` up to `total` steps with the CSV log and periodic
/// checkpoints. A non-finite step aborts and names the last good checkpoint.
fn drive(trainer: &mut Trainer<f32>, total: u64, every: u64, out: &OutDir, tag: &str, resumed_from: Option<&Path>) -> Result<TrainSummary> {
    let log_path = out.logs().join(format!("{tag}.csv"));
    let mut log = match resumed_from {
        Some(_) if log_path.exists() => TrainLog::append(&log_path)?,
        _ => TrainLog::create(&log_path)?,
    };
    let mut last_good = resumed_from.map(Path::to_path_buf);
    let mut last = LossReport { step: trainer.step, ..LossReport::default() };
    while trainer.step < total {
        match trainer.train_step() {
            Ok(r) => {
                log.write(&r, trainer.learning_rates())?;
                last = r;
                if trainer.step % every == 0 {
                    let p = out.checkpoints().join(format!("{tag}-{:06}.json", trainer.step));
                    trainer.save(&p)?;
                    last_good = Some(p);
                    log::info!("{tag}: step {} total {:.4}", trainer.step, r.total);
                }
            }
            Err(ReidError::NonFinite { step, component }) => {
                log.flush()?;
                let last_good = last_good.map_or_else(|| "none".to_string(), |p| p.display().to_string());
                return Err(CliError::NonFinite { step, component, last_good });
            }
            Err(e) => return Err(e.into()),
        }
    }
    log.flush()?;
    let checkpoint = out.checkpoints().join(format!("{tag}-final.json"));
    trainer.save(&checkpoint)?;
    let summary = TrainSummary { steps: trainer.step, final_report: last, checkpoint };
    write_json(&out.reports().join(format!("{tag}.json")), &summary)?;
    Ok(summary)
}

/// Trains the embedder on AIDQ crops of detector output.
pub fn train_detect(cfg: &RunConfig, out: &OutDir, resume: Option<&Path>) -> Result<TrainSummary> {
    let (dataset, _) = load_dataset(cfg)?;
    let profile = cfg.gan_profile()?;
    let source = detector(&cfg.source, cfg.seed)?;
    let crops = pipeline::detection_crops(&dataset.train_frames(), source.as_ref(), &cfg.detector, &profile)?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(p, TrainData::new(crops, dataset.num_identities)?)?,
        None => pipeline::new_trainer(profile, crops, dataset.num_identities, None, cfg.detect_train_config())?,
    };
    drive(&mut trainer, cfg.train.detect_steps, cfg.train.checkpoint_every, out, "train-detect", resume)
}

/// Joint generator and student training on ground-truth crops.
pub fn train_gan(cfg: &RunConfig, out: &OutDir, resume: Option<&Path>) -> Result<TrainSummary> {
    let (dataset, _) = load_dataset(cfg)?;
    let profile = cfg.gan_profile()?;
    let crops = pipeline::ground_truth_crops(&dataset.train_frames(), &profile)?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(p, TrainData::new(crops, dataset.num_identities)?)?,
        None => {
            let tc = cfg.train_config();
            let teacher = (tc.weights.kl > 0.0).then(|| pipeline::train_teacher(&crops, dataset.num_identities, &cfg.teacher)).transpose()?;
            pipeline::new_trainer(profile, crops, dataset.num_identities, teacher, tc)?
        }
    };
    drive(&mut trainer, cfg.train.gan_steps, cfg.train.checkpoint_every, out, "train-gan", resume)
}

fn require_checkpoint(path: Option<&Path>) -> Result<&Path> {
    let p = path.ok_or_else(|| CliError::Config("--checkpoint is required".into()))?;
    if !p.exists() {
        return Err(CliError::MissingCheckpoint(p.to_path_buf()));
    }
    Ok(p)
}

/// Writes `grids/synthesis.png` for the first `n_ids` identities.
pub fn synthesize(cfg: &RunConfig, out: &OutDir, checkpoint: Option<&Path>) -> Result<PathBuf> {
    let model = load_model::<f32>(require_checkpoint(checkpoint)?)?;
    let (dataset, _) = load_dataset(cfg)?;
    let n = cfg.eval.n_ids;
    if n > dataset.num_identities {
        return Err(CliError::Config(format!("n_ids {n} exceeds the {} identities", dataset.num_identities)));
    }
    let sources = pipeline::grid_sources(&dataset, &model.gan.profile, n)?;
    let grid = pipeline::synthesis_grid(&model, &sources)?;
    let path = out.grids().join("synthesis.png");
    ps_data::pngio::write_png(&path, &grid)?;
    Ok(path)
}

/// Evaluates a checkpoint on the dataset's protocol. Reports are written
/// before an unevaluable majority turns into an error.
pub fn evaluate(cfg: &RunConfig, out: &OutDir, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let model = load_model::<f32>(require_checkpoint(checkpoint)?)?;
    let (dataset, _) = load_dataset(cfg)?;
    let source = detector(&cfg.source, cfg.seed)?;
    let report = pipeline::evaluate_model(&dataset, &model, source.as_ref(), &cfg.search())?;
    write_json(&out.reports().join("evaluate.json"), &report)?;
    let mut csv = String::from("frame_id,identity,ap,first_correct\n");
    for q in &report.queries {
        let ap = q.ap.map_or_else(String::new, |v| format!("{v:.6}"));
        let first = q.first_correct.map_or_else(String::new, |v| v.to_string());
        csv.push_str(&format!("{},{},{ap},{first}\n", q.frame_id, q.identity.map_or_else(String::new, |v| v.to_string())));
    }
    fs::write(out.reports().join("evaluate.csv"), csv)?;
    let s = &report.summary;
    if s.mostly_unevaluable() {
        return Err(CliError::MostlyUnevaluable { unevaluable: s.n_unevaluable, total: s.n_unevaluable + s.n_queries });
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct SweepJson<'a> {
    report: &'a SweepReport,
    /// `(value, mean mAP, mean top-1)` per axis value.
    means: Vec<(f64, f64, f64)>,
    argmax: Option<f64>,
}

/// Gallery sweeps reuse one trained checkpoint. λ and IoU-threshold sweeps
/// retrain the embedder for every point, since both act at training time.
pub fn sweep(cfg: &RunConfig, out: &OutDir, checkpoint: Option<&Path>) -> Result<SweepReport> {
    let axis = SweepAxis::parse(&cfg.eval.axis)?;
    let (dataset, _) = load_dataset(cfg)?;
    let e = &cfg.eval;
    let report = match axis {
        SweepAxis::GallerySize => {
            let model = load_model::<f32>(require_checkpoint(checkpoint)?)?;
            let source = detector(&cfg.source, cfg.seed)?;
            let index = pipeline::test_index(&dataset, source.as_ref(), &model)?;
            gallery_sweep(&dataset, &index, &model, &cfg.search(), &e.gallery_sizes, e.n_queries, e.repetitions, cfg.seed)?
        }
        SweepAxis::Lambda | SweepAxis::IouThreshold => {
            let values = if axis == SweepAxis::Lambda { &e.lambdas } else { &e.iou_thresholds };
            SweepReport::run(axis, values, e.repetitions, cfg.seed, |v, _, seed| {
                let mut point = cfg.clone();
                point.seed = seed;
                if axis == SweepAxis::Lambda {
                    point.detector.hard_negative_ratio = v;
                } else {
                    point.detector.gt_match_iou_threshold = v;
                }
                let trainer = pipeline::train_detect_model(&point, &dataset, cfg.train.detect_steps).map_err(to_eval)?;
                let source = detector(&cfg.source, cfg.seed).map_err(to_eval)?;
                Ok(pipeline::evaluate_model(&dataset, &trainer.model, source.as_ref(), &cfg.search()).map_err(to_eval)?.summary)
            })?
        }
    };
    fs::write(out.reports().join(format!("sweep-{}.csv", axis.name())), report.to_csv())?;
    write_json(&out.reports().join(format!("sweep-{}.json", axis.name())), &SweepJson { report: &report, means: report.means(), argmax: report.argmax() })?;
    Ok(report)
}

fn to_eval(e: CliError) -> ps_eval::EvalError {
    match e {
        CliError::Eval(e) => e,
        CliError::Reid(e) => ps_eval::EvalError::Reid(e),
        other => ps_eval::EvalError::Config(other.to_string()),
    }
}

/// Seed used by repetition `rep` of a sweep.
pub fn sweep_seed(cfg: &RunConfig, rep: usize) -> u64 {
    repetition_seed(cfg.seed, rep)
}
