use ps_core::embedding::dot;
use ps_core::{IdentityLabel, Scalar};

use crate::memory::IdentityMemory;
use crate::{DetectError, Result};

/// Number of hard negatives `K` for a set of negative similarities.
///
/// Sorting descending, `K` is the prefix length whose share of the total
/// similarity is closest to `ratio`; ties go to the shorter prefix. When the
/// total is not positive the share is undefined and every negative is used.
pub fn hard_negative_count_from_scores<T: Scalar>(scores: &[T], ratio: T) -> Result<usize> {
    if scores.is_empty() {
        return Err(DetectError::NoNegatives);
    }
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let total: T = s.iter().copied().sum();
    if !(total > T::zero()) {
        return Ok(s.len());
    }
    let mut best = (T::infinity(), s.len());
    let mut cum = T::zero();
    for (k, &v) in s.iter().enumerate() {
        cum += v;
        let gap = (cum / total - ratio).abs();
        if gap < best.0 {
            best = (gap, k + 1);
        }
    }
    Ok(best.1)
}

pub fn hard_negative_count<T: Scalar>(x: &[T], negatives: &[&[T]], ratio: T) -> Result<usize> {
    let scores: Vec<T> = negatives.iter().map(|c| dot(x, c)).collect();
    hard_negative_count_from_scores(&scores, ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AidqOutput<T> {
    /// Batch-mean loss.
    pub loss: T,
    /// Gradient of `loss` with respect to each input embedding.
    pub grads: Vec<Vec<T>>,
    /// Hard-negative count used for each sample.
    pub ks: Vec<usize>,
}

/// Softmax loss of each embedding against its own center and its `K`
/// most similar negative centers (labeled and unlabeled pooled).
///
/// `K` and the selected negatives are treated as constants when
/// differentiating, so `grads` is exact away from selection ties.
pub fn aidq_loss<T: Scalar>(batch: &[(Vec<T>, IdentityLabel)], mem: &IdentityMemory<T>, temperature: T, ratio: T) -> Result<AidqOutput<T>> {
    if !(temperature > T::zero()) {
        return Err(DetectError::Config(format!("temperature must be positive, got {temperature}")));
    }
    if !(ratio > T::zero() && ratio <= T::one()) {
        return Err(DetectError::Config(format!("hard-negative ratio {ratio} outside (0, 1]")));
    }
    if batch.is_empty() {
        return Ok(AidqOutput { loss: T::zero(), grads: Vec::new(), ks: Vec::new() });
    }
    let n = T::from_usize(batch.len()).expect("batch size fits");
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(batch.len());
    let mut ks = Vec::with_capacity(batch.len());
    for (x, label) in batch {
        if x.len() != mem.dim() {
            return Err(DetectError::Dimension { expected: mem.dim(), got: x.len() });
        }
        let v = label.as_option().ok_or_else(|| DetectError::Config("identity loss needs labeled samples".into()))?;
        let pos = mem.label_index(v)?;
        let negatives = mem.negatives(pos);
        let scores: Vec<T> = negatives.iter().map(|c| dot(x, c)).collect();
        let k = hard_negative_count_from_scores(&scores, ratio)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
        order.truncate(k);

        let positive = &mem.labeled[pos];
        let mut centers: Vec<&[T]> = vec![positive];
        centers.extend(order.iter().map(|&i| negatives[i]));
        let logits: Vec<T> = centers.iter().map(|c| dot(x, c) / temperature).collect();
        let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - mx).exp()).collect();
        let z: T = exps.iter().copied().sum();
        total += z.ln() + mx - logits[0];

        let mut g = vec![T::zero(); x.len()];
        for (ci, c) in centers.iter().enumerate() {
            let w = (exps[ci] / z - if ci == 0 { T::one() } else { T::zero() }) / (temperature * n);
            for (gd, &cd) in g.iter_mut().zip(c.iter()) {
                *gd += w * cd;
            }
        }
        grads.push(g);
        ks.push(k);
    }
    Ok(AidqOutput { loss: total / n, grads, ks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_equal_scores_half_ratio() {
        assert_eq!(hard_negative_count_from_scores(&[0.3f64; 4], 0.5).unwrap(), 2);
    }

    #[test]
    fn descending_scores_point_four() {
        assert_eq!(hard_negative_count_from_scores(&[1.0f64, 3.0, 4.0, 2.0], 0.4).unwrap(), 1);
    }

    #[test]
    fn full_ratio_takes_everything() {
        assert_eq!(hard_negative_count_from_scores(&[0.9f64, 0.1, 0.5], 1.0).unwrap(), 3);
    }

    #[test]
    fn nonpositive_total_falls_back_to_all() {
        assert_eq!(hard_negative_count_from_scores(&[0.2f64, -0.5, -0.1], 0.5).unwrap(), 3);
        assert!(matches!(hard_negative_count_from_scores::<f64>(&[], 0.5), Err(DetectError::NoNegatives)));
    }

    #[test]
    fn self_match_with_one_orthogonal_negative() {
        let mem = IdentityMemory::from_centers(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![], 0.5, 0.5).unwrap();
        let out = aidq_loss(&[(vec![1.0f64, 0.0], IdentityLabel::Labeled(1))], &mem, 1.0, 0.6).unwrap();
        let expected = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        assert!((out.loss - expected).abs() < 1e-12);
        assert!((out.loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn rejects_zero_temperature() {
        let mem = IdentityMemory::from_centers(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![], 0.5, 0.5).unwrap();
        assert!(aidq_loss(&[(vec![1.0f64, 0.0], IdentityLabel::Labeled(1))], &mem, 0.0, 0.6).is_err());
    }
}
