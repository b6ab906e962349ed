//! End-to-end search: detect in gallery frames, embed, rank, score.

use std::collections::{BTreeMap, HashMap};

use ps_core::{crop_and_resize, ImageBuf, Scalar};
use ps_data::{AnnotatedFrame, Dataset, Query, SearchProtocol};
use ps_detect::DetectionSource;
use ps_reid::ReidModel;
use serde::{Deserialize, Serialize};

use crate::metrics::{average_precision, cmc_top_k, Hit, RankedResult};
use crate::{EvalError, Result};

/// Maps person crops to unit-norm feature vectors.
pub trait Embedder {
    /// `(height, width)` every crop is resized to.
    fn crop_size(&self) -> (usize, usize);

    fn embed(&self, crops: &[&ImageBuf<f32>]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Scalar> Embedder for ReidModel<T> {
    fn crop_size(&self) -> (usize, usize) {
        (self.gan.profile.crop_h, self.gan.profile.crop_w)
    }

    fn embed(&self, crops: &[&ImageBuf<f32>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.embed_batch(crops)?.into_iter().map(|e| e.values.iter().map(|v| v.to_f64_lossy()).collect()).collect())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub match_iou: f32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { match_iou: 0.5 }
    }
}

/// Detections and their embeddings for a set of gallery frames, computed once.
#[derive(Debug, Clone, Default)]
pub struct GalleryIndex {
    frames: BTreeMap<String, Vec<(ps_core::Detection<f32>, Vec<f64>)>>,
}

impl GalleryIndex {
    pub fn build<'a>(frames: impl IntoIterator<Item = &'a AnnotatedFrame>, detector: &dyn DetectionSource, embedder: &dyn Embedder) -> Result<Self> {
        let (h, w) = embedder.crop_size();
        let mut out = BTreeMap::new();
        for f in frames {
            let dets = detector.detect(f)?;
            let crops = dets.iter().map(|d| crop_and_resize(&f.scene.pixels, &d.bbox, h, w)).collect::<ps_core::Result<Vec<_>>>()?;
            let refs: Vec<&ImageBuf<f32>> = crops.iter().collect();
            let feats = if refs.is_empty() { Vec::new() } else { embedder.embed(&refs)? };
            out.insert(f.id().to_string(), dets.into_iter().zip(feats).collect());
        }
        Ok(GalleryIndex { frames: out })
    }

    /// Every frame referenced as a gallery by the protocol.
    pub fn for_protocol(dataset: &Dataset, protocol: &SearchProtocol, detector: &dyn DetectionSource, embedder: &dyn Embedder) -> Result<Self> {
        let mut ids: Vec<&str> = protocol.queries.iter().flat_map(|q| q.gallery.iter().map(String::as_str)).collect();
        ids.sort_unstable();
        ids.dedup();
        let frames = ids.into_iter().map(|id| dataset.frame(id).ok_or_else(|| EvalError::MissingFrame(id.into()))).collect::<Result<Vec<_>>>()?;
        Self::build(frames, detector, embedder)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_detections(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }
}

/// Ranks every detection in the query's gallery by cosine similarity to the
/// query crop. Errors with [`EvalError::Unevaluable`] when the query identity
/// has no ground-truth box in the gallery.
pub fn search(query: &Query, dataset: &Dataset, index: &GalleryIndex, embedder: &dyn Embedder, cfg: &SearchConfig) -> Result<RankedResult> {
    let qframe = dataset.frame(&query.frame_id).ok_or_else(|| EvalError::MissingFrame(query.frame_id.clone()))?;
    let (h, w) = embedder.crop_size();
    let crop = crop_and_resize(&qframe.scene.pixels, &query.bbox, h, w)?;
    let q = embedder.embed(&[&crop])?.remove(0);

    let mut hits = Vec::new();
    let mut truth = HashMap::new();
    for gid in &query.gallery {
        if *gid == query.frame_id {
            return Err(EvalError::Config(format!("query frame {gid} is part of its own gallery")));
        }
        let frame = dataset.frame(gid).ok_or_else(|| EvalError::MissingFrame(gid.clone()))?;
        let boxes: Vec<_> = frame.boxes_of(query.identity).copied().collect();
        if !boxes.is_empty() {
            truth.insert(gid.clone(), boxes);
        }
        let dets = index.frames.get(gid).ok_or_else(|| EvalError::MissingFrame(gid.clone()))?;
        hits.extend(dets.iter().map(|(d, f)| Hit { frame_id: gid.clone(), detection: d.clone(), similarity: cosine(&q, f) }));
    }
    if truth.is_empty() {
        return Err(EvalError::Unevaluable(format!("{}:{:?}", query.frame_id, query.identity)));
    }
    RankedResult::rank(hits, &truth, cfg.match_iou)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub frame_id: String,
    pub identity: Option<u32>,
    /// `None` for unevaluable queries.
    pub ap: Option<f64>,
    pub first_correct: Option<usize>,
}

/// Aggregate metrics; means are over evaluable queries only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
    /// Evaluable queries.
    pub n_queries: usize,
    pub n_unevaluable: usize,
}

impl EvalSummary {
    /// True when more than half of all queries could not be evaluated.
    pub fn mostly_unevaluable(&self) -> bool {
        self.n_unevaluable > self.n_queries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub queries: Vec<QueryOutcome>,
}

/// Runs every query of the protocol. Unevaluable queries are counted and
/// skipped; an all-unevaluable protocol yields zeros.
pub fn evaluate(dataset: &Dataset, protocol: &SearchProtocol, index: &GalleryIndex, embedder: &dyn Embedder, cfg: &SearchConfig) -> Result<EvalReport> {
    let mut ranked = Vec::new();
    let mut queries = Vec::with_capacity(protocol.queries.len());
    for q in &protocol.queries {
        let outcome = match search(q, dataset, index, embedder, cfg) {
            Ok(r) => {
                let o = QueryOutcome { frame_id: q.frame_id.clone(), identity: q.identity.as_option(), ap: Some(average_precision(&r)?), first_correct: r.first_correct() };
                ranked.push(r);
                o
            }
            Err(EvalError::Unevaluable(_)) => QueryOutcome { frame_id: q.frame_id.clone(), identity: q.identity.as_option(), ap: None, first_correct: None },
            Err(e) => return Err(e),
        };
        queries.push(outcome);
    }
    let n = ranked.len();
    let map = if n == 0 { 0.0 } else { queries.iter().filter_map(|q| q.ap).sum::<f64>() / n as f64 };
    let summary = EvalSummary {
        map,
        top1: cmc_top_k(&ranked, 1),
        top5: cmc_top_k(&ranked, 5),
        top10: cmc_top_k(&ranked, 10),
        n_queries: n,
        n_unevaluable: protocol.queries.len() - n,
    };
    Ok(EvalReport { summary, queries })
}
