use ps_core::{crop_and_resize, iou, BoundingBox, Detection, IdentityLabel, PersonCrop, Scalar};
use ps_data::AnnotatedFrame;

use crate::Result;

pub fn filter_by_confidence<T: Scalar>(dets: &[Detection<T>], threshold: T) -> Vec<Detection<T>> {
    dets.iter().filter(|d| d.score >= threshold).cloned().collect()
}

/// Greedy non-maximum suppression. Output is sorted by descending score;
/// equal scores keep their input order.
pub fn nms<T: Scalar>(dets: &[Detection<T>], iou_threshold: T) -> Vec<Detection<T>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(std::cmp::Ordering::Equal));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(dets[i].clone());
        for &j in &order[rank + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox).unwrap_or_else(|_| T::zero()) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// One-to-one assignment of detections to ground truth. Candidate pairs with
/// IoU strictly above the threshold are accepted greedily in descending IoU
/// order (ties: lower detection index, then lower ground-truth index).
pub fn match_to_ground_truth<T: Scalar>(
    dets: &[Detection<T>],
    gt: &[(BoundingBox<T>, IdentityLabel)],
    iou_threshold: T,
) -> Vec<(Detection<T>, Option<IdentityLabel>)> {
    let mut pairs = Vec::new();
    for (di, d) in dets.iter().enumerate() {
        for (gi, (g, _)) in gt.iter().enumerate() {
            let v = iou(&d.bbox, g).unwrap_or_else(|_| T::zero());
            if v > iou_threshold {
                pairs.push((v, di, gi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_to_gt = vec![None; dets.len()];
    let mut gt_used = vec![false; gt.len()];
    for (_, di, gi) in pairs {
        if det_to_gt[di].is_none() && !gt_used[gi] {
            det_to_gt[di] = Some(gi);
            gt_used[gi] = true;
        }
    }
    dets.iter()
        .zip(det_to_gt)
        .map(|(d, g)| {
            let label = g.map(|gi| gt[gi].1);
            let mut d = d.clone();
            d.identity = label;
            (d, label)
        })
        .collect()
}

/// Crops of the detections matched to a labeled identity; the crop carries that identity.
pub fn crop_positive_samples(
    frame: &AnnotatedFrame,
    matched: &[(Detection<f32>, Option<IdentityLabel>)],
    crop_h: usize,
    crop_w: usize,
) -> Result<Vec<PersonCrop<f32>>> {
    let mut out = Vec::new();
    for (d, label) in matched {
        if let Some(l @ IdentityLabel::Labeled(_)) = label {
            out.push(PersonCrop {
                pixels: crop_and_resize(&frame.scene.pixels, &d.bbox, crop_h, crop_w)?,
                identity: *l,
                source: frame.id().to_string(),
            });
        }
    }
    Ok(out)
}
