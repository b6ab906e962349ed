use std::collections::{BTreeSet, HashMap};

use ps_core::{crop_and_resize, BoundingBox, IdentityLabel, ImageBuf, PersonCrop};

use crate::{DataError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub pixels: ImageBuf<f32>,
    pub frame_id: String,
    pub camera_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub scene: SceneImage,
    pub ground_truth: Vec<(BoundingBox<f32>, IdentityLabel)>,
}

impl AnnotatedFrame {
    pub fn id(&self) -> &str {
        &self.scene.frame_id
    }

    pub fn boxes_of(&self, identity: IdentityLabel) -> impl Iterator<Item = &BoundingBox<f32>> {
        self.ground_truth.iter().filter(move |(_, l)| *l == identity).map(|(b, _)| b)
    }

    /// Crops of every labeled ground-truth person.
    pub fn labeled_crops(&self, crop_h: usize, crop_w: usize) -> Result<Vec<PersonCrop<f32>>> {
        Ok(self.crops(crop_h, crop_w)?.into_iter().filter(|c| c.identity.is_labeled()).collect())
    }

    /// Crops of every ground-truth person, unlabeled passers-by included.
    pub fn crops(&self, crop_h: usize, crop_w: usize) -> Result<Vec<PersonCrop<f32>>> {
        self.ground_truth
            .iter()
            .map(|(b, l)| {
                Ok(PersonCrop {
                    pixels: crop_and_resize(&self.scene.pixels, b, crop_h, crop_w)?,
                    identity: *l,
                    source: self.scene.frame_id.clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub frame_id: String,
    pub identity: IdentityLabel,
    pub bbox: BoundingBox<f32>,
    pub gallery: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchProtocol {
    pub queries: Vec<Query>,
    pub gallery_size: usize,
}

/// Frames plus the retrieval protocol. Frames referenced by the protocol, or
/// listed in `held_out`, are the test split; the rest is available for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<AnnotatedFrame>,
    pub protocol: SearchProtocol,
    pub num_identities: usize,
    pub held_out: BTreeSet<String>,
}

impl Dataset {
    pub fn frame_index(&self) -> HashMap<&str, usize> {
        self.frames.iter().enumerate().map(|(i, f)| (f.id(), i)).collect()
    }

    pub fn frame(&self, id: &str) -> Option<&AnnotatedFrame> {
        self.frames.iter().find(|f| f.id() == id)
    }

    pub fn test_frame_ids(&self) -> BTreeSet<&str> {
        let mut s: BTreeSet<&str> = self.held_out.iter().map(String::as_str).collect();
        for q in &self.protocol.queries {
            s.insert(q.frame_id.as_str());
            s.extend(q.gallery.iter().map(String::as_str));
        }
        s
    }

    pub fn train_frames(&self) -> Vec<&AnnotatedFrame> {
        let test = self.test_frame_ids();
        self.frames.iter().filter(|f| !test.contains(f.id())).collect()
    }

    pub fn num_boxes(&self) -> usize {
        self.frames.iter().map(|f| f.ground_truth.len()).sum()
    }

    /// Checks label range and the protocol against the frames.
    pub fn validate(&self) -> Result<()> {
        let idx = self.frame_index();
        if let Some(h) = self.held_out.iter().find(|h| !idx.contains_key(h.as_str())) {
            return Err(DataError::Manifest(format!("held-out frame {h} does not exist")));
        }
        for f in &self.frames {
            let mut seen = BTreeSet::new();
            for (i, (b, l)) in f.ground_truth.iter().enumerate() {
                b.validate().map_err(|e| DataError::InvalidBox { frame: f.id().to_string(), index: i, detail: e.to_string() })?;
                if let IdentityLabel::Labeled(v) = l {
                    if *v == 0 || *v as usize > self.num_identities {
                        return Err(DataError::InvalidBox {
                            frame: f.id().to_string(),
                            index: i,
                            detail: format!("identity {v} outside 1..={}", self.num_identities),
                        });
                    }
                    if !seen.insert(*v) {
                        return Err(DataError::DuplicateIdentity { frame: f.id().to_string(), identity: *v });
                    }
                }
            }
        }
        for (qi, q) in self.protocol.queries.iter().enumerate() {
            let bad = |detail: String| DataError::InvalidQuery { index: qi, detail };
            if !q.identity.is_labeled() {
                return Err(bad("query identity must be labeled".into()));
            }
            if !idx.contains_key(q.frame_id.as_str()) {
                return Err(bad(format!("unknown query frame {}", q.frame_id)));
            }
            if q.gallery.len() != self.protocol.gallery_size {
                return Err(bad(format!("gallery has {} frames, protocol size is {}", q.gallery.len(), self.protocol.gallery_size)));
            }
            let mut hit = false;
            for g in &q.gallery {
                let f = idx.get(g.as_str()).ok_or_else(|| bad(format!("unknown gallery frame {g}")))?;
                hit |= self.frames[*f].boxes_of(q.identity).next().is_some();
            }
            if !hit {
                return Err(bad("query identity absent from its gallery".into()));
            }
        }
        Ok(())
    }
}
