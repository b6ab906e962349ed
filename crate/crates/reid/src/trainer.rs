//! The joint generative and discriminative training step.

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use ps_core::{IdentityLabel, ImageBuf, PersonCrop, Scalar};
use ps_data::PairSampler;
use ps_detect::{aidq_loss, IdentityMemory};
use ps_nn::{Adam, Gradients, Optimizer, Section, Sgd, Tape, Tensor, Var};
use ps_synthgan::{load_checkpoint, save_checkpoint, tape_disc_loss, tape_gen_adv};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Context;
use crate::losses::oim_batch;
use crate::student::flatten_codes;
use crate::{RealLoss, ReidError, ReidModel, Result, TeacherModel, TrainConfig};

/// Every loss component of one step, as plain numbers. Skipped terms are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossReport {
    pub step: u64,
    pub recon_app: f64,
    pub recon_str: f64,
    pub id_synth: f64,
    pub adv_gen: f64,
    pub kl: f64,
    pub loc: f64,
    pub real: f64,
    pub total: f64,
    pub disc: f64,
}

impl LossReport {
    pub const COMPONENTS: [&'static str; 9] = ["recon_app", "recon_str", "id_synth", "adv_gen", "kl", "loc", "real", "total", "disc"];

    pub fn components(&self) -> [f64; 9] {
        [self.recon_app, self.recon_str, self.id_synth, self.adv_gen, self.kl, self.loc, self.real, self.total, self.disc]
    }

    /// Name of the first component that is NaN or infinite.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::COMPONENTS.iter().zip(self.components()).find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }
}

/// Training crops. Labeled crops feed pairs and the identity losses;
/// unlabeled crops only grow the unlabeled memory.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub labeled: Vec<PersonCrop<f32>>,
    pub unlabeled: Vec<PersonCrop<f32>>,
    pub num_classes: usize,
}

impl TrainData {
    /// Splits crops by label. Identities must be `1..=num_classes`.
    pub fn new(crops: Vec<PersonCrop<f32>>, num_classes: usize) -> Result<Self> {
        let (labeled, unlabeled): (Vec<_>, Vec<_>) = crops.into_iter().partition(|c| c.identity.is_labeled());
        if let Some(k) = labeled.iter().filter_map(|c| c.identity.class_index()).find(|&k| k >= num_classes) {
            return Err(ReidError::ClassIndex { index: k, classes: num_classes });
        }
        if labeled.iter().any(|c| c.identity.class_index().is_none()) {
            return Err(ReidError::Config("identity label 0 is reserved".into()));
        }
        Ok(TrainData { labeled, unlabeled, num_classes })
    }
}

#[derive(Debug, Clone)]
struct Optimizers<T> {
    app: Sgd<T>,
    structure: Adam<T>,
    dec: Adam<T>,
    heads: Adam<T>,
    disc: Adam<T>,
}

impl<T: Scalar> Optimizers<T> {
    fn new(cfg: &TrainConfig) -> Self {
        let o = &cfg.optim;
        let adam = || Adam::new(o.adam_lr, o.adam_beta1, o.adam_beta2);
        Optimizers { app: Sgd::new(o.app_lr, o.app_momentum), structure: adam(), dec: adam(), heads: adam(), disc: Adam::new(o.disc_lr, o.adam_beta1, o.adam_beta2) }
    }

    fn sections(&self) -> Vec<Section> {
        let named: [(&str, Vec<(String, Tensor<T>)>); 5] = [
            ("optim.app", self.app.state()),
            ("optim.structure", self.structure.state()),
            ("optim.decoder", self.dec.state()),
            ("optim.heads", self.heads.state()),
            ("optim.discriminator", self.disc.state()),
        ];
        named
            .into_iter()
            .map(|(name, state)| {
                let mut s = Section::new(name);
                for (k, t) in &state {
                    s.push(k.clone(), t);
                }
                s
            })
            .collect()
    }

    fn load(&mut self, archive: &ps_nn::Archive) -> Result<()> {
        let load = |name: &str, opt: &mut dyn Optimizer<T>| -> Result<()> {
            opt.load_state(&archive.require(name)?.tensors_as::<T>());
            Ok(())
        };
        load("optim.app", &mut self.app)?;
        load("optim.structure", &mut self.structure)?;
        load("optim.decoder", &mut self.dec)?;
        load("optim.heads", &mut self.heads)?;
        load("optim.discriminator", &mut self.disc)
    }
}

/// Owns all mutable training state: model, memory, optimizers, sampler.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub model: ReidModel<T>,
    pub teacher: Option<TeacherModel<T>>,
    pub memory: IdentityMemory<T>,
    pub config: TrainConfig,
    /// Steps completed so far.
    pub step: u64,
    data: TrainData,
    sampler: PairSampler,
    optim: Optimizers<T>,
}

fn tensor_item<T: Scalar>(tape: &Tape<T>, v: Var) -> f64 {
    tape.item(v).to_f64_lossy()
}

fn clip<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) {
    if max_norm > 0.0 {
        grads.clip_global_norm(max_norm);
    }
}

impl<T: Scalar> Trainer<T> {
    /// Validates the setup and seeds the labeled memory with the mean
    /// normalized embedding of each identity.
    pub fn new(model: ReidModel<T>, teacher: Option<TeacherModel<T>>, data: TrainData, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let memory = Self::initial_memory(&model, &data, &config)?;
        Self::assemble(model, teacher, data, config, memory)
    }

    fn assemble(model: ReidModel<T>, teacher: Option<TeacherModel<T>>, data: TrainData, config: TrainConfig, memory: IdentityMemory<T>) -> Result<Self> {
        if model.student.num_classes != data.num_classes {
            return Err(ReidError::Config(format!("student has {} classes, data has {}", model.student.num_classes, data.num_classes)));
        }
        match &teacher {
            Some(t) => {
                if t.num_classes != data.num_classes {
                    return Err(ReidError::Config(format!("teacher has {} classes, data has {}", t.num_classes, data.num_classes)));
                }
                let p = &model.gan.profile;
                if t.crop != [p.crop_h, p.crop_w] {
                    return Err(ReidError::Config(format!("teacher crop {:?} differs from profile {}x{}", t.crop, p.crop_h, p.crop_w)));
                }
            }
            None if config.weights.kl > 0.0 => return Err(ReidError::Config("kl weight is positive but no teacher was given".into())),
            None => {}
        }
        let sampler = PairSampler::from_crops(&data.labeled, config.seed)?;
        let optim = Optimizers::new(&config);
        Ok(Trainer { model, teacher, memory, config, step: 0, data, sampler, optim })
    }

    fn initial_memory(model: &ReidModel<T>, data: &TrainData, config: &TrainConfig) -> Result<IdentityMemory<T>> {
        let dim = model.embedding_dim();
        let crops: Vec<&ImageBuf<f32>> = data.labeled.iter().map(|c| &c.pixels).collect();
        let feats = model.embed_batch(&crops)?;
        let mut sums = vec![vec![T::zero(); dim]; data.num_classes];
        for (f, c) in feats.iter().zip(&data.labeled) {
            let k = c.identity.class_index().expect("labeled");
            sums[k].iter_mut().zip(&f.values).for_each(|(s, &v)| *s += v);
        }
        // Identities without crops keep a random center.
        let fallback = IdentityMemory::<T>::random(data.num_classes, dim, T::zero(), T::zero(), config.seed ^ 0x3e3);
        let labeled = sums
            .into_iter()
            .zip(fallback.labeled)
            .map(|(s, r)| ps_core::embedding::normalize_slice(&s).unwrap_or(r))
            .collect();
        IdentityMemory::from_centers(labeled, Vec::new(), T::lit(config.momentum), T::lit(config.new_center_threshold)).context("memory init")
    }

    pub fn data(&self) -> &TrainData {
        &self.data
    }

    /// Learning rates in log order: appearance SGD, Adam groups, discriminator.
    pub fn learning_rates(&self) -> [f64; 3] {
        [self.optim.app.learning_rate(), self.optim.heads.learning_rate(), self.optim.disc.learning_rate()]
    }

    /// One synchronized update of generator and student, then of the
    /// discriminator. On a non-finite loss or gradient nothing is updated.
    pub fn train_step(&mut self) -> Result<LossReport> {
        let step = self.step;
        let cfg = self.config.clone();
        let w = cfg.weights;
        let pairs = self.sampler.batch(cfg.pairs);
        let b = pairs.len();
        let mut idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        idx.extend(pairs.iter().map(|p| p.1));
        let labels: Vec<IdentityLabel> = idx.iter().map(|&i| self.data.labeled[i].identity).collect();
        for k in 0..b {
            if labels[k] == labels[b + k] {
                let v = labels[k].as_option().unwrap_or(0);
                return Err(ReidError::UnpairedIdentities(v, v));
            }
        }
        let targets: Vec<usize> = labels.iter().map(|l| l.class_index().expect("labeled")).collect();
        let structure_targets: Vec<usize> = targets[b..].iter().chain(&targets[..b]).copied().collect();
        let imgs: Vec<&ImageBuf<f32>> = idx.iter().map(|&i| &self.data.labeled[i].pixels).collect();

        let model = &self.model;
        let mut tape = Tape::new();
        let real = tape.constant(model.gan.batch_tensor(&imgs).context("real batch")?);
        let mut report = LossReport { step, ..LossReport::default() };
        let mut terms: Vec<(Var, T)> = Vec::new();

        let synth = w.uses_synthesis().then(|| model.gan.cross_forward(&mut tape, real, true));
        let app = match &synth {
            Some(s) => s.app,
            None => model.gan.app_forward(&mut tape, real, true),
        };
        let feat_real = flatten_codes(&mut tape, app);

        if w.prim > 0.0 {
            let real_loss = match cfg.real_loss {
                RealLoss::Ce => {
                    let z = model.student.primary_logits(&mut tape, feat_real, true);
                    tape.softmax_cross_entropy(z, &targets)
                }
                RealLoss::Oim | RealLoss::Aidq => {
                    let e = tape.row_normalize(feat_real);
                    let d = tape.shape(e)[1];
                    let rows: Vec<Vec<T>> = tape.value(e).data.chunks(d).map(<[T]>::to_vec).collect();
                    let tau = T::lit(cfg.temperature);
                    let (value, grads) = if cfg.real_loss == RealLoss::Oim {
                        let batch: Vec<(&[T], usize)> = rows.iter().map(Vec::as_slice).zip(targets.iter().copied()).collect();
                        oim_batch(&batch, &self.memory.labeled, tau)?
                    } else {
                        let batch: Vec<(Vec<T>, IdentityLabel)> = rows.into_iter().zip(labels.iter().copied()).collect();
                        let out = aidq_loss(&batch, &self.memory, tau, T::lit(cfg.hard_negative_ratio)).context("real-crop loss")?;
                        (out.loss, out.grads)
                    };
                    let g = Tensor::new(vec![grads.len(), d], grads.concat());
                    tape.external_loss(e, value, g)
                }
            };
            report.real = tensor_item(&tape, real_loss);
            terms.push((real_loss, T::lit(w.prim)));
        }

        if let Some(s) = &synth {
            if w.recon > 0.0 {
                report.recon_app = tensor_item(&tape, s.recon_app);
                report.recon_str = tensor_item(&tape, s.recon_str);
                terms.push((s.recon_app, T::lit(w.recon)));
                terms.push((s.recon_str, T::lit(w.recon)));
            }
            if w.id > 0.0 || w.kl > 0.0 || w.loc > 0.0 {
                let feat_fake = flatten_codes(&mut tape, s.fake_app);
                if w.id > 0.0 || w.kl > 0.0 {
                    let z = model.student.primary_logits(&mut tape, feat_fake, true);
                    if w.id > 0.0 {
                        let l = tape.softmax_cross_entropy(z, &targets);
                        report.id_synth = tensor_item(&tape, l);
                        terms.push((l, T::lit(w.id)));
                    }
                    if w.kl > 0.0 {
                        let teacher = self.teacher.as_ref().expect("checked at construction");
                        let q = teacher.logits(&mut tape, s.fakes, false);
                        let l = tape.kl_div_logits(z, q);
                        report.kl = tensor_item(&tape, l);
                        terms.push((l, T::lit(w.kl)));
                    }
                }
                if w.loc > 0.0 {
                    let z = model.student.fine_logits(&mut tape, feat_fake, true);
                    let l = tape.softmax_cross_entropy(z, &structure_targets);
                    report.loc = tensor_item(&tape, l);
                    terms.push((l, T::lit(w.loc)));
                }
            }
            if w.adv > 0.0 {
                let d = model.gan.disc_forward(&mut tape, s.fakes, false);
                let l = tape_gen_adv(&mut tape, d);
                report.adv_gen = tensor_item(&tape, l);
                terms.push((l, T::lit(w.adv)));
            }
        }

        if let Some(name) = report.first_non_finite() {
            return Err(ReidError::NonFinite { step, component: name.into() });
        }
        let embeddings: Vec<Vec<T>> = {
            let d = tape.shape(feat_real)[1];
            tape.value(feat_real).data.chunks(d).map(<[T]>::to_vec).collect()
        };
        let fakes = synth.as_ref().map(|s| tape.value(s.fakes).clone());

        let mut grads = if terms.is_empty() {
            Gradients::default()
        } else {
            let total = tape.weighted_sum(&terms);
            report.total = tensor_item(&tape, total);
            tape.backward(total)
        };
        if !grads.is_finite() || !report.total.is_finite() {
            return Err(ReidError::NonFinite { step, component: "gradient".into() });
        }

        let disc_grads = match (&fakes, w.adv > 0.0) {
            (Some(f), true) => {
                let mut dt = Tape::new();
                let r = dt.constant(tape.value(real).clone());
                let f = dt.constant(f.clone());
                let dr = model.gan.disc_forward(&mut dt, r, true);
                let df = model.gan.disc_forward(&mut dt, f, true);
                let l = tape_disc_loss(&mut dt, dr, df);
                report.disc = tensor_item(&dt, l);
                let g = dt.backward(l);
                if !report.disc.is_finite() || !g.is_finite() {
                    return Err(ReidError::NonFinite { step, component: "disc".into() });
                }
                Some(g)
            }
            _ => None,
        };

        clip(&mut grads, cfg.optim.clip_norm);
        let m = &mut self.model;
        self.optim.app.step(&mut m.gan.app_params, &grads);
        self.optim.structure.step(&mut m.gan.str_params, &grads);
        self.optim.dec.step(&mut m.gan.dec_params, &grads);
        self.optim.heads.step(&mut m.student.params, &grads);
        if let Some(mut g) = disc_grads {
            clip(&mut g, cfg.optim.clip_norm);
            self.optim.disc.step(&mut m.gan.disc_params, &g);
        }

        if cfg.real_loss != RealLoss::Ce {
            for (e, &l) in embeddings.iter().zip(&labels) {
                self.memory.update(e, l).context("memory update")?;
            }
            if cfg.real_loss == RealLoss::Aidq {
                self.grow_unlabeled(step)?;
            }
        }
        self.step += 1;
        Ok(report)
    }

    fn grow_unlabeled(&mut self, step: u64) -> Result<()> {
        let n = self.config.unlabeled_per_step.min(self.data.unlabeled.len());
        if n == 0 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0xa11ce);
        rng.set_stream(step);
        let picked: Vec<&ImageBuf<f32>> = sample(&mut rng, self.data.unlabeled.len(), n).iter().map(|i| &self.data.unlabeled[i].pixels).collect();
        for e in self.model.embed_batch(&picked)? {
            self.memory.update(&e.values, IdentityLabel::Unlabeled).context("memory update")?;
        }
        Ok(())
    }

    /// Runs `steps` more steps, handing each report to `on_step`.
    pub fn run(&mut self, steps: u64, mut on_step: impl FnMut(&Self, &LossReport) -> Result<()>) -> Result<LossReport> {
        let mut last = LossReport { step: self.step, ..LossReport::default() };
        for _ in 0..steps {
            last = self.train_step()?;
            on_step(self, &last)?;
        }
        Ok(last)
    }

    /// Writes networks, heads, teacher, memory and optimizer state.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut sections = vec![self.model.student.section()];
        if let Some(t) = &self.teacher {
            sections.push(t.section());
        }
        let mut mem = Section::new("memory");
        let dim = self.memory.dim();
        mem.push("labeled", &Tensor::new(vec![self.memory.labeled.len(), dim], self.memory.labeled.concat()));
        if !self.memory.unlabeled.is_empty() {
            mem.push("unlabeled", &Tensor::new(vec![self.memory.unlabeled.len(), dim], self.memory.unlabeled.concat()));
        }
        sections.push(mem);
        sections.extend(self.optim.sections());
        let meta = serde_json::json!({
            "step": self.step,
            "train": self.config,
            "num_classes": self.data.num_classes,
            "teacher": self.teacher.as_ref().map(TeacherModel::meta),
        });
        save_checkpoint(path, &self.model.gan, meta, sections).context("saving checkpoint")
    }

    /// Restores a trainer saved by [`Trainer::save`] over the same data.
    pub fn resume(path: &Path, data: TrainData) -> Result<Self> {
        let (model, archive) = load_model_archive::<T>(path)?;
        let bad = |what: &str| ReidError::Checkpoint(format!("missing or invalid {what}"));
        let config: TrainConfig = serde_json::from_value(archive.meta["train"].clone()).map_err(|_| bad("train config"))?;
        let step = archive.meta["step"].as_u64().ok_or_else(|| bad("step"))?;
        let teacher = match &archive.meta["teacher"] {
            serde_json::Value::Null => None,
            meta => Some(TeacherModel::from_archive(&archive, meta)?),
        };
        let mem = archive.require("memory")?;
        let rows = |name: &str| -> Vec<Vec<T>> {
            mem.tensors_as::<T>()
                .into_iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.data.chunks(model.embedding_dim()).map(<[T]>::to_vec).collect())
                .unwrap_or_default()
        };
        let memory = IdentityMemory::from_centers(rows("labeled"), rows("unlabeled"), T::lit(config.momentum), T::lit(config.new_center_threshold))
            .context("restoring memory")?;
        let mut trainer = Self::assemble(model, teacher, data, config, memory)?;
        trainer.optim.load(&archive)?;
        for _ in 0..step {
            trainer.sampler.batch(trainer.config.pairs);
        }
        trainer.step = step;
        Ok(trainer)
    }
}

fn load_model_archive<T: Scalar>(path: &Path) -> Result<(ReidModel<T>, ps_nn::Archive)> {
    let (gan, archive) = load_checkpoint::<T>(path).context("loading checkpoint")?;
    let bad = |what: &str| ReidError::Checkpoint(format!("missing or invalid {what}"));
    let config: TrainConfig = serde_json::from_value(archive.meta["train"].clone()).map_err(|_| bad("train config"))?;
    let classes = archive.meta["num_classes"].as_u64().ok_or_else(|| bad("num_classes"))? as usize;
    let mut model = ReidModel::new(gan, classes, config.seed);
    archive.require("student.heads")?.load_into(&mut model.student.params)?;
    Ok((model, archive))
}

/// The generator and heads of a checkpoint written by [`Trainer::save`].
pub fn load_model<T: Scalar>(path: &Path) -> Result<ReidModel<T>> {
    Ok(load_model_archive(path)?.0)
}

/// CSV training log: one row per step with every component, the learning
/// rates and elapsed wall time.
pub struct TrainLog {
    writer: csv::Writer<File>,
    started: Instant,
}

impl TrainLog {
    pub const HEADER: [&'static str; 14] =
        ["step", "recon_app", "recon_str", "id_synth", "adv_gen", "kl", "loc", "real", "total", "disc", "lr_app", "lr_adam", "lr_disc", "wall_seconds"];

    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(Self::HEADER)?;
        Ok(TrainLog { writer, started: Instant::now() })
    }

    /// Appends to an existing log, as when resuming.
    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok(TrainLog { writer: csv::WriterBuilder::new().has_headers(false).from_writer(file), started: Instant::now() })
    }

    pub fn write(&mut self, report: &LossReport, learning_rates: [f64; 3]) -> Result<()> {
        let mut row = vec![report.step.to_string()];
        row.extend(report.components().iter().map(|v| format!("{v:.9e}")));
        row.extend(learning_rates.iter().map(|v| format!("{v:e}")));
        row.push(format!("{:.3}", self.started.elapsed().as_secs_f64()));
        self.writer.write_record(&row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}
