use ps_core::{ImageBuf, PersonCrop, Scalar};
use ps_nn::{Adam, Archive, Conv2d, Linear, Optimizer, ParamSet, Section, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::softmax;
use crate::{ReidError, Result, TEACHER_SET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub widths: [usize; 3],
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig { steps: 600, batch: 16, lr: 1e-3, widths: [16, 32, 64], seed: 0 }
    }
}

/// Frozen classifier that assigns soft identity labels to synthetic crops.
///
/// Three strided convolutions, max pooling to four horizontal bands, and a
/// linear layer over identities.
#[derive(Debug, Clone)]
pub struct TeacherModel<T> {
    pub convs: Vec<Conv2d>,
    pub fc: Linear,
    pub params: ParamSet<T>,
    pub num_classes: usize,
    pub crop: [usize; 2],
    /// Where the weights came from.
    pub provenance: String,
}

const BANDS: usize = 4;

impl<T: Scalar> TeacherModel<T> {
    pub fn new(num_classes: usize, crop_h: usize, crop_w: usize, widths: [usize; 3], seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(ReidError::Config(format!("teacher needs at least 2 classes, got {num_classes}")));
        }
        if crop_h % 8 != 0 || crop_w % 8 != 0 || crop_h / 8 < BANDS {
            return Err(ReidError::Config(format!("teacher crop {crop_h}x{crop_w} must be a multiple of 8 and at least 32 high")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e4c);
        let mut params = ParamSet::new(TEACHER_SET);
        let mut cin = 3;
        let mut convs = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            convs.push(Conv2d::new(&mut params, &format!("teacher.conv{i}"), cin, w, 4, 2, 1, true, &mut rng));
            cin = w;
        }
        let fc = Linear::new(&mut params, "teacher.fc", cin * BANDS, num_classes, 1.0, &mut rng);
        Ok(TeacherModel { convs, fc, params, num_classes, crop: [crop_h, crop_w], provenance: "untrained".into() })
    }

    /// Logits `[N, M]`. Parameters enter the tape frozen unless `trainable`.
    pub fn logits(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Var {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(tape, &self.params, h, trainable);
            h = tape.leaky_relu(h, T::lit(0.2));
        }
        let h = tape.adaptive_max_pool(h, BANDS, 1);
        let n = tape.shape(h)[0];
        let f = tape.shape(h)[1..].iter().product();
        let h = tape.reshape(h, &[n, f]);
        self.fc.forward(tape, &self.params, h, trainable)
    }

    fn batch(&self, crops: &[&ImageBuf<f32>]) -> Result<Tensor<T>> {
        let [h, w] = self.crop;
        let mut data = Vec::with_capacity(crops.len() * 3 * h * w);
        for c in crops {
            if (c.channels, c.height, c.width) != (3, h, w) {
                return Err(ReidError::Length { what: "teacher crop pixels", expected: 3 * h * w, got: c.data.len() });
            }
            data.extend(c.data.iter().map(|&v| T::lit(v as f64)));
        }
        Ok(Tensor::new(vec![crops.len(), 3, h, w], data))
    }

    /// Soft labels for a batch of crops.
    pub fn soft_labels(&self, crops: &[&ImageBuf<f32>]) -> Result<Vec<Vec<T>>> {
        let mut tape = Tape::new();
        let x = tape.constant(self.batch(crops)?);
        let z = self.logits(&mut tape, x, false);
        Ok(tape.value(z).data.chunks(self.num_classes).map(softmax).collect())
    }

    /// Fits the classifier on labeled crops with softmax cross-entropy.
    pub fn train(crops: &[PersonCrop<f32>], num_classes: usize, cfg: &TeacherConfig) -> Result<Self> {
        let labeled: Vec<(&ImageBuf<f32>, usize)> = crops.iter().filter_map(|c| c.identity.class_index().map(|k| (&c.pixels, k))).collect();
        let first = labeled.first().ok_or(ReidError::Unlabeled("teacher training"))?.0;
        if let Some(&(_, k)) = labeled.iter().find(|(_, k)| *k >= num_classes) {
            return Err(ReidError::ClassIndex { index: k, classes: num_classes });
        }
        if cfg.batch == 0 {
            return Err(ReidError::Config("teacher batch must be at least 1".into()));
        }
        let mut model = Self::new(num_classes, first.height, first.width, cfg.widths, cfg.seed)?;
        let mut opt = Adam::new(cfg.lr, 0.9, 0.999);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        let mut cursor = order.len();
        for _ in 0..cfg.steps {
            let mut idx = Vec::with_capacity(cfg.batch);
            while idx.len() < cfg.batch.min(labeled.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            let imgs: Vec<&ImageBuf<f32>> = idx.iter().map(|&i| labeled[i].0).collect();
            let targets: Vec<usize> = idx.iter().map(|&i| labeled[i].1).collect();
            let mut tape = Tape::new();
            let x = tape.constant(model.batch(&imgs)?);
            let z = model.logits(&mut tape, x, true);
            let loss = tape.softmax_cross_entropy(z, &targets);
            let grads = tape.backward(loss);
            opt.step(&mut model.params, &grads);
        }
        model.provenance = format!("trained on {} labeled crops for {} steps (seed {})", labeled.len(), cfg.steps, cfg.seed);
        Ok(model)
    }

    /// Fraction of labeled crops whose arg-max soft label is their identity.
    pub fn accuracy(&self, crops: &[PersonCrop<f32>]) -> Result<f64> {
        let labeled: Vec<&PersonCrop<f32>> = crops.iter().filter(|c| c.identity.is_labeled()).collect();
        if labeled.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0;
        for chunk in labeled.chunks(64) {
            let imgs: Vec<&ImageBuf<f32>> = chunk.iter().map(|c| &c.pixels).collect();
            for (p, c) in self.soft_labels(&imgs)?.iter().zip(chunk) {
                let best = (0..p.len()).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap_or(std::cmp::Ordering::Equal));
                hits += usize::from(best == c.identity.class_index());
            }
        }
        Ok(hits as f64 / labeled.len() as f64)
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    pub fn section(&self) -> Section {
        Section::from_params("teacher", &self.params)
    }

    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "classes": self.num_classes, "crop": self.crop, "widths": self.convs.iter().map(|c| c.out_channels).collect::<Vec<_>>(), "provenance": self.provenance })
    }

    /// Rebuilds a teacher from [`TeacherModel::meta`] and its section.
    pub fn from_archive(archive: &Archive, meta: &serde_json::Value) -> Result<Self> {
        let bad = |what: &str| ReidError::Checkpoint(format!("teacher meta: {what}"));
        let classes = meta["classes"].as_u64().ok_or_else(|| bad("classes"))? as usize;
        let crop: [usize; 2] = serde_json::from_value(meta["crop"].clone()).map_err(|_| bad("crop"))?;
        let widths: [usize; 3] = serde_json::from_value(meta["widths"].clone()).map_err(|_| bad("widths"))?;
        let mut t = Self::new(classes, crop[0], crop[1], widths, 0)?;
        archive.require("teacher")?.load_into(&mut t.params)?;
        t.provenance = meta["provenance"].as_str().unwrap_or("unknown").to_string();
        Ok(t)
    }
}
