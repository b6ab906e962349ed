//! Classification and distillation losses on plain slices.
//!
//! Each loss has a `*_grad` companion returning the gradient with respect
//! to its differentiable input, so the same code serves training (via
//! external tape nodes) and finite-difference tests.

use ps_core::embedding::dot;
use ps_core::{IdentityLabel, Scalar};

use crate::{ReidError, Result};

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let mx = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - mx).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_index(index: usize, classes: usize) -> Result<()> {
    if index >= classes {
        return Err(ReidError::ClassIndex { index, classes });
    }
    Ok(())
}

/// `-log p[true_class]` with `p` floored at [`PROB_FLOOR`].
pub fn cross_entropy<T: Scalar>(p: &[T], true_class: usize) -> Result<T> {
    check_index(true_class, p.len())?;
    Ok(-p[true_class].max(T::lit(PROB_FLOOR)).ln())
}

/// `cross_entropy(softmax(z), t)` computed in log space, with its gradient
/// `softmax(z) - onehot(t)` (zero once the floor is active).
pub fn softmax_cross_entropy_grad<T: Scalar>(z: &[T], t: usize) -> Result<(T, Vec<T>)> {
    check_index(t, z.len())?;
    let mx = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = z.iter().map(|&v| (v - mx).exp()).sum::<T>().ln() + mx;
    let log_p = z[t] - lse;
    let floor = T::lit(PROB_FLOOR.ln());
    if log_p < floor {
        return Ok((-floor, vec![T::zero(); z.len()]));
    }
    let mut g = softmax(z);
    g[t] -= T::one();
    Ok((-log_p, g))
}

fn label_class(label: IdentityLabel, what: &'static str) -> Result<usize> {
    label.class_index().ok_or(ReidError::Unlabeled(what))
}

/// Identity loss on a synthetic image: the target is its appearance provider.
pub fn synth_id_loss<T: Scalar>(p: &[T], appearance_source: IdentityLabel) -> Result<T> {
    cross_entropy(p, label_class(appearance_source, "synth_id_loss")?)
}

/// Identity loss on a synthetic image against its structure provider.
pub fn structure_id_loss<T: Scalar>(p: &[T], structure_source: IdentityLabel) -> Result<T> {
    cross_entropy(p, label_class(structure_source, "structure_id_loss")?)
}

/// `sum_m q_m log(q_m / p_m)`; zero-probability teacher entries contribute
/// nothing and `p` is floored at [`PROB_FLOOR`].
pub fn kl_distill<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(ReidError::Length { what: "student distribution", expected: q.len(), got: p.len() });
    }
    let floor = T::lit(PROB_FLOOR);
    Ok(p.iter()
        .zip(q)
        .filter(|(_, &qm)| qm > T::zero())
        .map(|(&pm, &qm)| qm * (qm.ln() - pm.max(floor).ln()))
        .sum())
}

/// `kl_distill(softmax(z), q)` and its gradient with respect to the student
/// logits `z`, which is `softmax(z) - q` while no entry is floored.
pub fn kl_distill_logits_grad<T: Scalar>(z: &[T], q: &[T]) -> Result<(T, Vec<T>)> {
    let p = softmax(z);
    let loss = kl_distill(&p, q)?;
    let floor = T::lit(PROB_FLOOR);
    let qsum: T = q.iter().zip(&p).filter(|(_, &pm)| pm >= floor).map(|(&qm, _)| qm).sum();
    let g = p
        .iter()
        .zip(q)
        .map(|(&pm, &qm)| if pm < floor { pm * qsum } else { pm * qsum - qm })
        .collect();
    Ok((loss, g))
}

/// Online-instance-matching loss `-log softmax(x . m / tau)[j]` of one
/// normalized embedding against a bank of centers.
pub fn oim_loss<T: Scalar>(x: &[T], centers: &[Vec<T>], j: usize, tau: T) -> Result<T> {
    Ok(oim_loss_grad(x, centers, j, tau)?.0)
}

/// [`oim_loss`] with its gradient in `x`: `sum_c (p_c - [c = j]) m_c / tau`.
pub fn oim_loss_grad<T: Scalar>(x: &[T], centers: &[Vec<T>], j: usize, tau: T) -> Result<(T, Vec<T>)> {
    if !(tau > T::zero()) {
        return Err(ReidError::Config(format!("temperature must be positive, got {tau}")));
    }
    check_index(j, centers.len())?;
    let mut logits = Vec::with_capacity(centers.len());
    for c in centers {
        if c.len() != x.len() {
            return Err(ReidError::Length { what: "memory center", expected: x.len(), got: c.len() });
        }
        logits.push(dot(x, c) / tau);
    }
    let (loss, gz) = softmax_cross_entropy_grad(&logits, j)?;
    let mut g = vec![T::zero(); x.len()];
    for (c, &w) in centers.iter().zip(&gz) {
        for (gd, &cd) in g.iter_mut().zip(c) {
            *gd += w * cd / tau;
        }
    }
    Ok((loss, g))
}

/// Batch-mean [`oim_loss`] over `(embedding, class index)` pairs, with the
/// gradient of the mean for each embedding.
pub fn oim_batch<T: Scalar>(batch: &[(&[T], usize)], centers: &[Vec<T>], tau: T) -> Result<(T, Vec<Vec<T>>)> {
    if batch.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    let n = T::lit(batch.len() as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(batch.len());
    for (x, j) in batch {
        let (l, g) = oim_loss_grad(x, centers, *j, tau)?;
        total += l;
        grads.push(g.into_iter().map(|v| v / n).collect());
    }
    Ok((total / n, grads))
}
