//! Dataset manifest: one JSON document listing frames, their person boxes
//! and the retrieval queries. Images are 8-bit RGB PNGs next to the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ps_core::{BoundingBox, IdentityLabel};
use serde::{Deserialize, Serialize};

use crate::pngio::{read_png, write_png};
use crate::types::{AnnotatedFrame, Dataset, Query, SceneImage, SearchProtocol};
use crate::{DataError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestFile {
    pub frames: Vec<FrameEntry>,
    #[serde(default)]
    pub queries: Vec<QueryEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameEntry {
    pub id: String,
    pub image: String,
    pub boxes: Vec<BoxEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<String>,
    /// `"test"` keeps a frame out of training even when no query uses it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoxEntry {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub identity: Option<u32>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Coords {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryEntry {
    pub frame: String,
    pub identity: u32,
    #[serde(rename = "box")]
    pub bbox: Coords,
    pub gallery: Vec<String>,
}

fn to_box(frame: &str, index: usize, x1: f64, y1: f64, x2: f64, y2: f64) -> Result<BoundingBox<f32>> {
    BoundingBox::new(x1 as f32, y1 as f32, x2 as f32, y2 as f32)
        .map_err(|e| DataError::InvalidBox { frame: frame.to_string(), index, detail: e.to_string() })
}

/// Parses a manifest and its images. Labels are re-indexed to `1..=M` in
/// ascending order of the original values.
pub fn load_annotations(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let manifest: ManifestFile = serde_json::from_str(&text)?;
    let root = path.parent().unwrap_or(Path::new("."));

    let originals: BTreeSet<u32> = manifest.frames.iter().flat_map(|f| f.boxes.iter().filter_map(|b| b.identity)).collect();
    let remap: BTreeMap<u32, u32> = originals.iter().enumerate().map(|(i, &v)| (v, i as u32 + 1)).collect();

    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut ids = BTreeSet::new();
    let mut held_out = BTreeSet::new();
    for fe in &manifest.frames {
        if !ids.insert(fe.id.clone()) {
            return Err(DataError::Manifest(format!("duplicate frame id {}", fe.id)));
        }
        match fe.split.as_deref() {
            None | Some("train") => {}
            Some("test") => {
                held_out.insert(fe.id.clone());
            }
            Some(other) => return Err(DataError::Manifest(format!("frame {}: unknown split {other:?}", fe.id))),
        }
        let img_path = root.join(&fe.image);
        if !img_path.exists() {
            return Err(DataError::MissingImage {
                frame: fe.id.clone(),
                path: img_path,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            });
        }
        let pixels = read_png(&img_path).map_err(|detail| DataError::Decode { frame: fe.id.clone(), detail })?;
        let (w, h) = (pixels.width as f32, pixels.height as f32);
        let mut gt = Vec::with_capacity(fe.boxes.len());
        let mut seen = BTreeSet::new();
        for (i, b) in fe.boxes.iter().enumerate() {
            let bx = to_box(&fe.id, i, b.x1, b.y1, b.x2, b.y2)?;
            let clipped = bx.clip(w, h).ok_or_else(|| DataError::InvalidBox {
                frame: fe.id.clone(),
                index: i,
                detail: "box lies outside the image".into(),
            })?;
            let label = IdentityLabel::from_option(b.identity.map(|v| remap[&v]));
            if let (Some(orig), IdentityLabel::Labeled(_)) = (b.identity, label) {
                if !seen.insert(orig) {
                    return Err(DataError::DuplicateIdentity { frame: fe.id.clone(), identity: orig });
                }
            }
            gt.push((clipped, label));
        }
        frames.push(AnnotatedFrame {
            scene: SceneImage { pixels, frame_id: fe.id.clone(), camera_id: fe.camera.clone() },
            ground_truth: gt,
        });
    }

    let mut queries = Vec::with_capacity(manifest.queries.len());
    for (qi, q) in manifest.queries.iter().enumerate() {
        let identity = remap
            .get(&q.identity)
            .map(|&v| IdentityLabel::Labeled(v))
            .ok_or_else(|| DataError::InvalidQuery { index: qi, detail: format!("identity {} never annotated", q.identity) })?;
        let bbox = to_box(&q.frame, 0, q.bbox.x1, q.bbox.y1, q.bbox.x2, q.bbox.y2)?;
        queries.push(Query { frame_id: q.frame.clone(), identity, bbox, gallery: q.gallery.clone() });
    }
    let gallery_size = queries.first().map_or(0, |q| q.gallery.len());
    let ds = Dataset { frames, protocol: SearchProtocol { queries, gallery_size }, num_identities: remap.len(), held_out };
    ds.validate()?;
    Ok(ds)
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes `manifest.json` and `images/<frame>.png` under `dir`.
pub fn save_annotations(ds: &Dataset, dir: &Path) -> Result<()> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir)?;
    let mut frames = Vec::with_capacity(ds.frames.len());
    for f in &ds.frames {
        let rel = format!("images/{}.png", file_stem(f.id()));
        write_png(&dir.join(&rel), &f.scene.pixels)?;
        frames.push(FrameEntry {
            id: f.id().to_string(),
            image: rel,
            boxes: f
                .ground_truth
                .iter()
                .map(|(b, l)| BoxEntry { x1: b.x1 as f64, y1: b.y1 as f64, x2: b.x2 as f64, y2: b.y2 as f64, identity: l.as_option() })
                .collect(),
            camera: f.scene.camera_id.clone(),
            split: ds.held_out.contains(f.id()).then(|| "test".to_string()),
        });
    }
    let queries = ds
        .protocol
        .queries
        .iter()
        .map(|q| QueryEntry {
            frame: q.frame_id.clone(),
            identity: q.identity.as_option().unwrap_or(0),
            bbox: Coords { x1: q.bbox.x1 as f64, y1: q.bbox.y1 as f64, x2: q.bbox.x2 as f64, y2: q.bbox.y2 as f64 },
            gallery: q.gallery.clone(),
        })
        .collect();
    let text = serde_json::to_string_pretty(&ManifestFile { frames, queries })?;
    fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}
