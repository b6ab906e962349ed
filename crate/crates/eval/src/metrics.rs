//! Average precision, mean AP and CMC over ranked search results.

use std::cmp::Ordering;
use std::collections::HashMap;

use ps_core::{iou, BoundingBox, Detection};

use crate::{EvalError, Result};

/// One gallery detection scored against a query.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub frame_id: String,
    pub detection: Detection<f32>,
    pub similarity: f64,
}

/// Gallery detections in rank order with their correctness flags.
///
/// Built only through [`RankedResult::rank`], which sorts the hits and
/// derives `rel` from ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    hits: Vec<Hit>,
    rel: Vec<bool>,
    n_gt: usize,
}

/// Similarity descending, then detection score descending, then frame id.
fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.detection.score.partial_cmp(&a.detection.score).unwrap_or(Ordering::Equal))
        .then_with(|| a.frame_id.cmp(&b.frame_id))
}

impl RankedResult {
    /// Sorts `hits` and marks each correct when it overlaps a still-unclaimed
    /// ground-truth box of the query identity in its frame by at least
    /// `match_iou`. Each ground-truth box can be claimed once, by the
    /// highest-ranked detection that reaches it. `truth` maps frame id to the
    /// query identity's boxes there; `n_gt` counts all of them.
    pub fn rank(mut hits: Vec<Hit>, truth: &HashMap<String, Vec<BoundingBox<f32>>>, match_iou: f32) -> Result<Self> {
        if !(match_iou > 0.0 && match_iou <= 1.0) {
            return Err(EvalError::Config(format!("match_iou {match_iou} outside (0, 1]")));
        }
        hits.sort_by(rank_order);
        let mut claimed: HashMap<&str, Vec<bool>> = truth.iter().map(|(f, b)| (f.as_str(), vec![false; b.len()])).collect();
        let mut rel = Vec::with_capacity(hits.len());
        for h in &hits {
            let mut ok = false;
            if let (Some(boxes), Some(used)) = (truth.get(&h.frame_id), claimed.get_mut(h.frame_id.as_str())) {
                let mut best: Option<(usize, f32)> = None;
                for (i, b) in boxes.iter().enumerate() {
                    let o = iou(&h.detection.bbox, b)?;
                    if !used[i] && o >= match_iou && best.map_or(true, |(_, bo)| o > bo) {
                        best = Some((i, o));
                    }
                }
                if let Some((i, _)) = best {
                    used[i] = true;
                    ok = true;
                }
            }
            rel.push(ok);
        }
        let n_gt = truth.values().map(Vec::len).sum();
        Ok(RankedResult { hits, rel, n_gt })
    }

    pub fn hits(&self) -> &[Hit] {
        &self.hits
    }

    pub fn rel(&self) -> &[bool] {
        &self.rel
    }

    pub fn n_gt(&self) -> usize {
        self.n_gt
    }

    /// 1-based rank of the first correct hit.
    pub fn first_correct(&self) -> Option<usize> {
        self.rel.iter().position(|&r| r).map(|p| p + 1)
    }
}

/// `sum_k P(k) rel(k) / N_gt`, with `P(k)` the precision of the top `k`.
pub fn average_precision(r: &RankedResult) -> Result<f64> {
    if r.n_gt == 0 {
        return Err(EvalError::Unevaluable("ranked result".into()));
    }
    let mut correct = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in r.rel.iter().enumerate() {
        if rel {
            correct += 1;
            sum += correct as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / r.n_gt as f64)
}

pub fn mean_ap(results: &[RankedResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut total = 0.0;
    for r in results {
        total += average_precision(r)?;
    }
    Ok(total / results.len() as f64)
}

/// Fraction of queries with a correct hit in the top `k`. Zero for `k = 0`
/// or no queries.
pub fn cmc_top_k(results: &[RankedResult], k: usize) -> f64 {
    if results.is_empty() || k == 0 {
        return 0.0;
    }
    let found = results.iter().filter(|r| r.rel.iter().take(k).any(|&x| x)).count();
    found as f64 / results.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f32) -> BoundingBox<f32> {
        BoundingBox::new(x, 0.0, x + 10.0, 20.0).unwrap()
    }

    fn hit(frame: &str, x: f32, sim: f64) -> Hit {
        Hit { frame_id: frame.into(), detection: Detection::new(bx(x), 0.9).unwrap(), similarity: sim }
    }

    fn truth(entries: &[(&str, f32)]) -> HashMap<String, Vec<BoundingBox<f32>>> {
        let mut t: HashMap<String, Vec<BoundingBox<f32>>> = HashMap::new();
        for &(f, x) in entries {
            t.entry(f.into()).or_default().push(bx(x));
        }
        t
    }

    #[test]
    fn single_relevant_first() {
        let r = RankedResult::rank(vec![hit("a", 0.0, 0.9), hit("b", 0.0, 0.1)], &truth(&[("a", 0.0)]), 0.5).unwrap();
        assert_eq!(average_precision(&r).unwrap(), 1.0);
    }

    #[test]
    fn relevant_at_one_and_three() {
        let hits = vec![hit("a", 0.0, 0.9), hit("b", 50.0, 0.8), hit("c", 0.0, 0.7)];
        let r = RankedResult::rank(hits, &truth(&[("a", 0.0), ("c", 0.0)]), 0.5).unwrap();
        assert_eq!(r.rel(), &[true, false, true]);
        assert!((average_precision(&r).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn nothing_retrieved() {
        let r = RankedResult::rank(vec![hit("a", 50.0, 0.9)], &truth(&[("a", 0.0)]), 0.5).unwrap();
        assert_eq!(average_precision(&r).unwrap(), 0.0);
        let none = RankedResult::rank(vec![hit("a", 0.0, 0.9)], &HashMap::new(), 0.5).unwrap();
        assert!(matches!(average_precision(&none), Err(EvalError::Unevaluable(_))));
    }

    #[test]
    fn duplicate_detections_claim_once() {
        let r = RankedResult::rank(vec![hit("a", 0.0, 0.9), hit("a", 1.0, 0.8)], &truth(&[("a", 0.0)]), 0.5).unwrap();
        assert_eq!(r.rel(), &[true, false]);
        assert_eq!(average_precision(&r).unwrap(), 1.0);
    }

    #[test]
    fn ties_fall_to_score_then_frame() {
        let mut low = hit("a", 0.0, 0.5);
        low.detection.score = 0.6;
        let r = RankedResult::rank(vec![low, hit("c", 0.0, 0.5), hit("b", 0.0, 0.5)], &HashMap::new(), 0.5).unwrap();
        let order: Vec<&str> = r.hits().iter().map(|h| h.frame_id.as_str()).collect();
        assert_eq!(order, ["b", "c", "a"]);
    }

    #[test]
    fn mean_and_cmc() {
        let t = truth(&[("a", 0.0)]);
        let good = RankedResult::rank(vec![hit("a", 0.0, 0.9)], &t, 0.5).unwrap();
        let bad = RankedResult::rank(vec![hit("a", 50.0, 0.9)], &t, 0.5).unwrap();
        assert_eq!(mean_ap(std::slice::from_ref(&good)).unwrap(), 1.0);
        assert_eq!(mean_ap(&[good.clone(), bad]).unwrap(), 0.5);
        assert!(matches!(mean_ap(&[]), Err(EvalError::NoQueries)));
        let second = RankedResult::rank(vec![hit("b", 0.0, 0.9), hit("a", 0.0, 0.8)], &t, 0.5).unwrap();
        assert_eq!(cmc_top_k(std::slice::from_ref(&second), 1), 0.0);
        assert_eq!(cmc_top_k(std::slice::from_ref(&second), 2), 1.0);
        assert_eq!(cmc_top_k(&[good], 1), 1.0);
    }
}
