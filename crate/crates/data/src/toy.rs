//! Procedural person-search world.
//!
//! Each person is drawn as head, torso (with arms) and legs rectangles. The
//! identity fixes the clothing palette and a body-width factor; every rendered
//! instance independently draws a pose, a scale and a position. Backgrounds
//! are desaturated gradients with value noise so saturated clothing is the
//! only strong color in a frame.

use std::collections::BTreeSet;

use ps_core::{BoundingBox, IdentityLabel, ImageBuf};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::sample_protocol;
use crate::types::{AnnotatedFrame, Dataset, SceneImage};
use crate::{DataError, Result};

/// Saturated clothing colors, pairwise far apart and far from the gray backgrounds.
pub const BASE_COLORS: [[f32; 3]; 12] = [
    [0.86, 0.10, 0.10],
    [0.10, 0.70, 0.15],
    [0.12, 0.20, 0.90],
    [0.95, 0.85, 0.10],
    [0.85, 0.15, 0.80],
    [0.10, 0.80, 0.85],
    [1.00, 0.50, 0.05],
    [0.45, 0.10, 0.60],
    [1.00, 0.60, 0.75],
    [0.45, 0.25, 0.05],
    [0.97, 0.97, 0.97],
    [0.04, 0.04, 0.04],
];

pub const MAX_POSES: usize = 8;

/// (arm style, leg style) per pose index.
const POSES: [(u8, u8); MAX_POSES] = [(0, 0), (1, 1), (0, 1), (1, 0), (2, 0), (3, 1), (2, 1), (3, 0)];

type Rect = [f32; 4]; // u0, v0, u1, v1 in unit box coordinates

const HEAD: Rect = [0.34, 0.0, 0.66, 0.18];
const TORSO: Rect = [0.25, 0.18, 0.75, 0.56];
/// Vertical bands the appearance oracle inspects: head, torso, legs.
const BANDS: [(f32, f32); 3] = [(0.0, 0.18), (0.18, 0.55), (0.56, 1.0)];

fn arm_rects(style: u8) -> Vec<Rect> {
    let left_down = [0.08, 0.20, 0.25, 0.52];
    let right_down = [0.75, 0.20, 0.92, 0.52];
    match style {
        0 => vec![left_down, right_down],
        1 => vec![[0.0, 0.20, 0.25, 0.29], [0.75, 0.20, 1.0, 0.29]],
        2 => vec![[0.08, 0.0, 0.25, 0.20], right_down],
        _ => vec![left_down, [0.75, 0.0, 0.92, 0.20]],
    }
}

fn leg_rects(style: u8) -> Vec<Rect> {
    match style {
        0 => vec![[0.30, 0.56, 0.70, 1.0]],
        _ => vec![[0.14, 0.56, 0.42, 1.0], [0.58, 0.56, 0.86, 1.0]],
    }
}

/// Part index (0 head, 1 torso/arms, 2 legs) and rectangle for every body part of a pose.
fn body_parts(pose: usize) -> Vec<(usize, Rect)> {
    let (arms, legs) = POSES[pose];
    let mut parts = vec![(0, HEAD), (1, TORSO)];
    parts.extend(arm_rects(arms).into_iter().map(|r| (1, r)));
    parts.extend(leg_rects(legs).into_iter().map(|r| (2, r)));
    parts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Palette {
    pub head: usize,
    pub torso: usize,
    pub legs: usize,
}

impl Palette {
    pub fn part(&self, i: usize) -> usize {
        [self.head, self.torso, self.legs][i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub n_identities: usize,
    pub n_frames: usize,
    pub persons_per_frame: usize,
    pub seed: u64,
    pub image_height: usize,
    pub image_width: usize,
    /// Number of base colors identities draw their palettes from.
    pub palette_dim: usize,
    pub pose_count: usize,
    pub n_cameras: usize,
    /// Chance that a person slot holds an unlabeled passer-by.
    pub unlabeled_prob: f64,
    /// Trailing frames reserved for the retrieval protocol.
    pub test_frames: usize,
    /// Identities that only appear in test frames (open-set protocol). 0 = closed set.
    pub test_identities: usize,
    pub gallery_size: usize,
    pub n_queries: usize,
    /// Poses available to each identity in training frames; test frames use all poses.
    pub train_poses_per_identity: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            n_identities: 8,
            n_frames: 64,
            persons_per_frame: 3,
            seed: 0,
            image_height: 96,
            image_width: 128,
            palette_dim: 8,
            pose_count: 4,
            n_cameras: 2,
            unlabeled_prob: 0.0,
            test_frames: 24,
            test_identities: 0,
            gallery_size: 12,
            n_queries: 16,
            train_poses_per_identity: 4,
        }
    }
}

const MIN_SCALE: f32 = 0.62;
const MAX_SCALE: f32 = 0.85;
const WIDTH_RATIO: f32 = 0.42;
const MAX_BUILD: f32 = 1.15;
const MIN_BUILD: f32 = 0.85;

impl ToySpec {
    pub fn max_person_width(&self) -> usize {
        (self.image_height as f32 * MAX_SCALE * WIDTH_RATIO * MAX_BUILD).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.n_identities < 2 {
            return bad(format!("n_identities must be at least 2, got {}", self.n_identities));
        }
        if self.n_frames == 0 || self.persons_per_frame == 0 {
            return bad("n_frames and persons_per_frame must be positive".into());
        }
        if self.image_height < 32 || self.image_width < 16 {
            return bad("image must be at least 32x16".into());
        }
        if !(2..=BASE_COLORS.len()).contains(&self.palette_dim) {
            return bad(format!("palette_dim must be in 2..={}", BASE_COLORS.len()));
        }
        if !(1..=MAX_POSES).contains(&self.pose_count) {
            return bad(format!("pose_count must be in 1..={MAX_POSES}"));
        }
        if self.train_poses_per_identity == 0 || self.train_poses_per_identity > self.pose_count {
            return bad("train_poses_per_identity must be in 1..=pose_count".into());
        }
        if !(0.0..1.0).contains(&self.unlabeled_prob) {
            return bad("unlabeled_prob must be in [0, 1)".into());
        }
        if self.test_frames > self.n_frames {
            return bad("test_frames exceeds n_frames".into());
        }
        if self.test_identities >= self.n_identities {
            return bad("test_identities must leave at least one training identity".into());
        }
        let labeled_per_frame = self.persons_per_frame;
        let train_ids = self.n_identities - self.test_identities;
        let test_pool = if self.test_identities > 0 { self.test_identities } else { self.n_identities };
        if labeled_per_frame > train_ids.min(test_pool) {
            return bad("persons_per_frame exceeds the identities available to a frame".into());
        }
        let combos = self.palette_dim * (self.palette_dim - 1) * (self.palette_dim - 1);
        if self.n_identities + 8 > combos {
            return bad(format!("palette_dim {} cannot give {} distinct palettes", self.palette_dim, self.n_identities));
        }
        if self.n_cameras == 0 {
            return bad("n_cameras must be positive".into());
        }
        if self.test_frames > 0 && self.n_queries > 0 && self.gallery_size + 1 > self.test_frames {
            return bad(format!("gallery_size {} needs at least {} test frames", self.gallery_size, self.gallery_size + 1));
        }
        let slot = self.image_width / self.persons_per_frame;
        if slot < self.max_person_width() + 2 {
            return Err(DataError::Placement {
                persons: self.persons_per_frame,
                person_width: self.max_person_width(),
                width: self.image_width,
            });
        }
        Ok(())
    }
}

/// Recovers the generating factors of a rendered crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOracle {
    /// Palette of identity `k + 1`.
    pub palettes: Vec<Palette>,
    pub builds: Vec<f32>,
    pub palette_dim: usize,
    pub pose_count: usize,
    pub color_radius: f32,
}

fn color_dist2(px: [f32; 3], c: [f32; 3]) -> f32 {
    (px[0] - c[0]).powi(2) + (px[1] - c[1]).powi(2) + (px[2] - c[2]).powi(2)
}

fn pixel(img: &ImageBuf<f32>, y: usize, x: usize) -> [f32; 3] {
    [img.get(0, y, x), img.get(1, y, x), img.get(2, y, x)]
}

impl ToyOracle {
    /// Per-identity score: summed fraction of each body band covered by that
    /// identity's color for the band.
    pub fn appearance_scores(&self, crop: &ImageBuf<f32>) -> Vec<f32> {
        let r2 = self.color_radius * self.color_radius;
        let (h, w) = (crop.height, crop.width);
        // coverage[band][color]
        let mut coverage = [[0f32; BASE_COLORS.len()]; 3];
        for (b, &(v0, v1)) in BANDS.iter().enumerate() {
            let (y0, y1) = ((v0 * h as f32) as usize, ((v1 * h as f32) as usize).min(h));
            let n = ((y1 - y0) * w).max(1) as f32;
            for y in y0..y1 {
                for x in 0..w {
                    let p = pixel(crop, y, x);
                    let mut best = (f32::MAX, 0);
                    for (ci, &c) in BASE_COLORS[..self.palette_dim].iter().enumerate() {
                        let d = color_dist2(p, c);
                        if d < best.0 {
                            best = (d, ci);
                        }
                    }
                    if best.0 <= r2 {
                        coverage[b][best.1] += 1.0 / n;
                    }
                }
            }
        }
        self.palettes.iter().map(|p| (0..3).map(|b| coverage[b][p.part(b)]).sum()).collect()
    }

    /// Nearest labeled palette, or `Unlabeled` when no clothing color is visible.
    pub fn classify_appearance(&self, crop: &ImageBuf<f32>) -> IdentityLabel {
        let scores = self.appearance_scores(crop);
        let (best, score) = scores.iter().enumerate().fold((0, f32::MIN), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
        if score <= 0.0 {
            IdentityLabel::Unlabeled
        } else {
            IdentityLabel::Labeled(best as u32 + 1)
        }
    }

    /// Pose whose silhouette template best overlaps the crop's clothing mask.
    pub fn classify_structure(&self, crop: &ImageBuf<f32>) -> usize {
        let r2 = self.color_radius * self.color_radius;
        let (h, w) = (crop.height, crop.width);
        let mask: Vec<bool> = (0..h * w)
            .map(|i| {
                let p = pixel(crop, i / w, i % w);
                BASE_COLORS[..self.palette_dim].iter().any(|&c| color_dist2(p, c) <= r2)
            })
            .collect();
        let mut best = (f32::MIN, 0);
        for pose in 0..self.pose_count {
            let t = silhouette(pose, h, w);
            let inter = mask.iter().zip(&t).filter(|(a, b)| **a && **b).count() as f32;
            let union = mask.iter().zip(&t).filter(|(a, b)| **a || **b).count().max(1) as f32;
            if inter / union > best.0 {
                best = (inter / union, pose);
            }
        }
        best.1
    }
}

/// Binary silhouette of a pose rasterized at `h x w` (pixel centers).
pub fn silhouette(pose: usize, h: usize, w: usize) -> Vec<bool> {
    let parts = body_parts(pose);
    (0..h * w)
        .map(|i| {
            let v = ((i / w) as f32 + 0.5) / h as f32;
            let u = ((i % w) as f32 + 0.5) / w as f32;
            parts.iter().any(|(_, r)| u >= r[0] && u < r[2] && v >= r[1] && v < r[3])
        })
        .collect()
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn render_background(spec: &ToySpec, camera: usize, rng: &mut ChaCha8Rng) -> ImageBuf<f32> {
    let (h, w) = (spec.image_height, spec.image_width);
    let base = 0.40 + 0.15 * (camera % 3) as f32 / 2.0;
    let tint: [f32; 3] = [rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03)];
    let gx: f32 = rng.gen_range(-0.12..0.12);
    let gy: f32 = rng.gen_range(-0.12..0.12);
    let cell = 8usize;
    let (ch, cw) = (h / cell + 2, w / cell + 2);
    let coarse: Vec<f32> = (0..ch * cw).map(|_| rng.gen_range(-0.08..0.08)).collect();
    let mut img = ImageBuf::filled(3, h, w, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f32 / cell as f32, x as f32 / cell as f32);
            let (y0, x0) = (fy as usize, fx as usize);
            let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
            let at = |yy: usize, xx: usize| coarse[yy * cw + xx];
            let noise = at(y0, x0) * (1.0 - ty) * (1.0 - tx)
                + at(y0, x0 + 1) * (1.0 - ty) * tx
                + at(y0 + 1, x0) * ty * (1.0 - tx)
                + at(y0 + 1, x0 + 1) * ty * tx;
            let grad = gx * (x as f32 / w as f32 - 0.5) + gy * (y as f32 / h as f32 - 0.5);
            let fine: f32 = rng.gen_range(-0.03..0.03);
            for (c, t) in tint.iter().enumerate() {
                img.set(c, y, x, quantize(base + grad + noise + fine + t));
            }
        }
    }
    img
}

fn render_person(img: &mut ImageBuf<f32>, palette: &Palette, pose: usize, bbox: &BoundingBox<f32>, rng: &mut ChaCha8Rng) {
    let (bw, bh) = (bbox.width(), bbox.height());
    let (x0, y0) = (bbox.x1 as usize, bbox.y1 as usize);
    let (x1, y1) = ((bbox.x2 as usize).min(img.width), (bbox.y2 as usize).min(img.height));
    let parts = body_parts(pose);
    for y in y0..y1 {
        let v = (y as f32 + 0.5 - bbox.y1) / bh;
        for x in x0..x1 {
            let u = (x as f32 + 0.5 - bbox.x1) / bw;
            if let Some((part, _)) = parts.iter().find(|(_, r)| u >= r[0] && u < r[2] && v >= r[1] && v < r[3]) {
                let col = BASE_COLORS[palette.part(*part)];
                let shade: f32 = rng.gen_range(-0.03..0.03);
                for (c, &cv) in col.iter().enumerate() {
                    img.set(c, y, x, quantize(cv + shade));
                }
            }
        }
    }
}

fn random_palette(dim: usize, rng: &mut ChaCha8Rng) -> Palette {
    loop {
        let p = Palette { head: rng.gen_range(0..dim), torso: rng.gen_range(0..dim), legs: rng.gen_range(0..dim) };
        if p.head != p.torso && p.torso != p.legs {
            return p;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub dataset: Dataset,
    pub oracle: ToyOracle,
    pub spec: ToySpec,
    /// Pose index of every ground-truth box, parallel to `frame.ground_truth`.
    pub poses: Vec<Vec<usize>>,
}

/// Renders the toy world described by `spec`. Output is a pure function of the spec.
pub fn generate_toy_dataset(spec: &ToySpec) -> Result<ToyDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut used = BTreeSet::new();
    let mut palettes = Vec::with_capacity(spec.n_identities);
    while palettes.len() < spec.n_identities {
        let p = random_palette(spec.palette_dim, &mut rng);
        if used.insert(p) {
            palettes.push(p);
        }
    }
    let builds: Vec<f32> = (0..spec.n_identities).map(|_| rng.gen_range(MIN_BUILD..MAX_BUILD)).collect();
    let train_poses: Vec<Vec<usize>> = (0..spec.n_identities)
        .map(|_| {
            let mut all: Vec<usize> = (0..spec.pose_count).collect();
            all.shuffle(&mut rng);
            all.truncate(spec.train_poses_per_identity);
            all
        })
        .collect();

    let n_train_ids = spec.n_identities - spec.test_identities;
    let first_test = spec.n_frames - spec.test_frames;
    let slot = spec.image_width / spec.persons_per_frame;
    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut poses = Vec::with_capacity(spec.n_frames);
    for f in 0..spec.n_frames {
        let camera = f % spec.n_cameras;
        let is_test = f >= first_test;
        let mut img = render_background(spec, camera, &mut rng);
        let pool: Vec<usize> = if spec.test_identities > 0 && is_test {
            (n_train_ids..spec.n_identities).collect()
        } else if spec.test_identities > 0 {
            (0..n_train_ids).collect()
        } else {
            (0..spec.n_identities).collect()
        };
        let chosen: Vec<usize> = pool.choose_multiple(&mut rng, spec.persons_per_frame).copied().collect();
        let mut gt = Vec::with_capacity(spec.persons_per_frame);
        let mut frame_poses = Vec::with_capacity(spec.persons_per_frame);
        for (s, &id) in chosen.iter().enumerate() {
            let unlabeled = rng.gen_bool(spec.unlabeled_prob);
            let (palette, build, label) = if unlabeled {
                let p = loop {
                    let p = random_palette(spec.palette_dim, &mut rng);
                    if !used.contains(&p) {
                        break p;
                    }
                };
                (p, rng.gen_range(MIN_BUILD..MAX_BUILD), IdentityLabel::Unlabeled)
            } else {
                (palettes[id], builds[id], IdentityLabel::Labeled(id as u32 + 1))
            };
            let pose = if is_test || unlabeled {
                rng.gen_range(0..spec.pose_count)
            } else {
                *train_poses[id].choose(&mut rng).expect("non-empty pose subset")
            };
            let scale: f32 = rng.gen_range(MIN_SCALE..MAX_SCALE);
            let ph = (spec.image_height as f32 * scale).round();
            let pw = (ph * WIDTH_RATIO * build).round();
            let x = (s * slot) as f32 + rng.gen_range(0..=(slot - pw as usize - 1)) as f32;
            let y = rng.gen_range(0..=(spec.image_height - ph as usize)) as f32;
            let bbox = BoundingBox::new(x, y, x + pw, y + ph)?;
            render_person(&mut img, &palette, pose, &bbox, &mut rng);
            gt.push((bbox, label));
            frame_poses.push(pose);
        }
        frames.push(AnnotatedFrame {
            scene: SceneImage { pixels: img, frame_id: format!("f{f:05}"), camera_id: Some(format!("cam{camera}")) },
            ground_truth: gt,
        });
        poses.push(frame_poses);
    }

    let test_ids: Vec<String> = frames[first_test..].iter().map(|f| f.id().to_string()).collect();
    let protocol = if spec.test_frames > 0 && spec.n_queries > 0 {
        sample_protocol(&frames, &test_ids, spec.gallery_size, spec.n_queries, spec.seed ^ 0x9e37_79b9)?
    } else {
        crate::types::SearchProtocol { queries: Vec::new(), gallery_size: 0 }
    };
    let held_out = test_ids.into_iter().collect();
    let dataset = Dataset { frames, protocol, num_identities: spec.n_identities, held_out };
    dataset.validate()?;
    let oracle = ToyOracle { palettes, builds, palette_dim: spec.palette_dim, pose_count: spec.pose_count, color_radius: 0.2 };
    Ok(ToyDataset { dataset, oracle, spec: spec.clone(), poses })
}
