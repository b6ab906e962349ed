//! Where detections come from. Region-proposal training is out of scope, so
//! the pipeline accepts ground truth (optionally perturbed), precomputed
//! boxes from a file, or a color-segmentation detector for toy scenes.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use ps_core::{iou, BoundingBox, Detection, ImageBuf};
use ps_data::AnnotatedFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{DetectError, Result};

pub trait DetectionSource {
    fn detect(&self, frame: &AnnotatedFrame) -> Result<Vec<Detection<f32>>>;
}

/// Per-frame RNG stream that does not depend on call order.
fn frame_rng(seed: u64, frame_id: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in frame_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

fn jitter_box(b: &BoundingBox<f32>, amount: f32, rng: &mut ChaCha8Rng, width: f32, height: f32) -> Option<BoundingBox<f32>> {
    let (w, h) = (b.width(), b.height());
    let mut d = || if amount > 0.0 { rng.gen_range(-amount..=amount) } else { 0.0 };
    let (dx1, dy1, dx2, dy2) = (d() * w, d() * h, d() * w, d() * h);
    let j = BoundingBox::new(b.x1 + dx1, b.y1 + dy1, b.x2 + dx2, b.y2 + dy2).ok()?;
    j.clip(width, height).filter(|c| c.width() >= 1.0 && c.height() >= 1.0)
}

/// Ground-truth boxes, each corner moved by up to `jitter` of the box size.
/// Scores fall with the damage done: `0.5 + 0.5 * IoU(jittered, truth)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDetector {
    pub jitter: f32,
    pub seed: u64,
}

impl DetectionSource for GroundTruthDetector {
    fn detect(&self, frame: &AnnotatedFrame) -> Result<Vec<Detection<f32>>> {
        let img = &frame.scene.pixels;
        let mut rng = frame_rng(self.seed, frame.id());
        let mut out = Vec::with_capacity(frame.ground_truth.len());
        for (b, _) in &frame.ground_truth {
            if let Some(j) = jitter_box(b, self.jitter, &mut rng, img.width as f32, img.height as f32) {
                let score = 0.5 + 0.5 * iou(&j, b)?;
                out.push(Detection::new(j, score.min(1.0))?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FileEntry {
    frame: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    score: f64,
}

/// Precomputed detections keyed by frame id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileDetections {
    pub by_frame: HashMap<String, Vec<Detection<f32>>>,
}

impl FileDetections {
    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<FileEntry> = serde_json::from_str(text)?;
        let mut by_frame: HashMap<String, Vec<Detection<f32>>> = HashMap::new();
        for (i, e) in entries.into_iter().enumerate() {
            let bbox = BoundingBox::new(e.x1 as f32, e.y1 as f32, e.x2 as f32, e.y2 as f32)
                .map_err(|err| DetectError::File(format!("entry {i} (frame {}): {err}", e.frame)))?;
            let det = Detection::new(bbox, e.score as f32).map_err(|err| DetectError::File(format!("entry {i} (frame {}): {err}", e.frame)))?;
            by_frame.entry(e.frame).or_default().push(det);
        }
        Ok(FileDetections { by_frame })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut frames: Vec<&String> = self.by_frame.keys().collect();
        frames.sort();
        let mut entries = Vec::new();
        for f in frames {
            for d in &self.by_frame[f] {
                let b = &d.bbox;
                entries.push(FileEntry { frame: f.clone(), x1: b.x1 as f64, y1: b.y1 as f64, x2: b.x2 as f64, y2: b.y2 as f64, score: d.score as f64 });
            }
        }
        Ok(serde_json::to_string_pretty(&entries)?)
    }
}

impl DetectionSource for FileDetections {
    fn detect(&self, frame: &AnnotatedFrame) -> Result<Vec<Detection<f32>>> {
        Ok(self.by_frame.get(frame.id()).cloned().unwrap_or_default())
    }
}

/// Finds toy people as connected blobs of strongly colored pixels against the
/// gray backgrounds. Optionally adds jittered proposals around each blob, as a
/// proposal network would, so that suppression and matching have work to do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDetector {
    pub min_area: usize,
    pub proposals_per_person: usize,
    pub proposal_jitter: f32,
    pub seed: u64,
}

impl Default for ToyDetector {
    fn default() -> Self {
        ToyDetector { min_area: 40, proposals_per_person: 0, proposal_jitter: 0.15, seed: 0 }
    }
}

pub fn is_foreground(img: &ImageBuf<f32>, y: usize, x: usize) -> bool {
    let (r, g, b) = (img.get(0, y, x), img.get(1, y, x), img.get(2, y, x));
    let sat = r.max(g).max(b) - r.min(g).min(b);
    let lum = (r + g + b) / 3.0;
    sat > 0.3 || lum > 0.85 || lum < 0.15
}

/// Bounding boxes and pixel counts of 4-connected foreground components.
pub fn foreground_components(img: &ImageBuf<f32>, min_area: usize) -> Vec<(BoundingBox<f32>, usize)> {
    let (h, w) = (img.height, img.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if seen[start] || !is_foreground(img, start / w, start % w) {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1, mut n) = (w, h, 0, 0, 0);
        while let Some(p) = queue.pop_front() {
            let (y, x) = (p / w, p % w);
            n += 1;
            (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
            let mut visit = |q: usize| {
                if !seen[q] && is_foreground(img, q / w, q % w) {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        if n >= min_area {
            let b = BoundingBox::new(x0 as f32, y0 as f32, (x1 + 1) as f32, (y1 + 1) as f32).expect("component box is non-empty");
            out.push((b, n));
        }
    }
    out
}

impl DetectionSource for ToyDetector {
    fn detect(&self, frame: &AnnotatedFrame) -> Result<Vec<Detection<f32>>> {
        let img = &frame.scene.pixels;
        let mut rng = frame_rng(self.seed, frame.id());
        let mut out = Vec::new();
        for (b, n) in foreground_components(img, self.min_area) {
            let fill = n as f32 / b.area();
            let score = (0.5 + fill).min(1.0);
            out.push(Detection::new(b, score)?);
            for _ in 0..self.proposals_per_person {
                if let Some(j) = jitter_box(&b, self.proposal_jitter, &mut rng, img.width as f32, img.height as f32) {
                    out.push(Detection::new(j, score * iou(&j, &b)?)?);
                }
            }
        }
        Ok(out)
    }
}
