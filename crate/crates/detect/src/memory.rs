use ps_core::embedding::{dot, normalize_slice};
use ps_core::{IdentityLabel, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{DetectError, Result};

/// Unit-norm identity centers: one per labeled identity plus a growing set
/// for unlabeled people.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityMemory<T> {
    pub labeled: Vec<Vec<T>>,
    pub unlabeled: Vec<Vec<T>>,
    pub momentum: T,
    pub new_center_threshold: T,
}

impl<T: Scalar> IdentityMemory<T> {
    /// `m` labeled centers drawn uniformly on the unit sphere.
    pub fn random(m: usize, dim: usize, momentum: T, new_center_threshold: T, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labeled = (0..m)
            .map(|_| {
                let v: Vec<T> = (0..dim).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
                normalize_slice(&v).expect("gaussian draw is nonzero")
            })
            .collect();
        IdentityMemory { labeled, unlabeled: Vec::new(), momentum, new_center_threshold }
    }

    pub fn from_centers(labeled: Vec<Vec<T>>, unlabeled: Vec<Vec<T>>, momentum: T, new_center_threshold: T) -> Result<Self> {
        let dim = labeled.first().or(unlabeled.first()).map_or(0, Vec::len);
        let mut norm = |v: Vec<T>| -> Result<Vec<T>> {
            if v.len() != dim {
                return Err(DetectError::Dimension { expected: dim, got: v.len() });
            }
            Ok(normalize_slice(&v)?)
        };
        let labeled = labeled.into_iter().map(&mut norm).collect::<Result<_>>()?;
        let unlabeled = unlabeled.into_iter().map(&mut norm).collect::<Result<_>>()?;
        Ok(IdentityMemory { labeled, unlabeled, momentum, new_center_threshold })
    }

    pub fn num_identities(&self) -> usize {
        self.labeled.len()
    }

    pub fn dim(&self) -> usize {
        self.labeled.first().or(self.unlabeled.first()).map_or(0, Vec::len)
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        let d = self.dim();
        if d != 0 && x.len() != d {
            return Err(DetectError::Dimension { expected: d, got: x.len() });
        }
        Ok(())
    }

    fn blend(&self, center: &[T], x: &[T]) -> Vec<T> {
        let mu = self.momentum;
        let mixed: Vec<T> = center.iter().zip(x).map(|(&c, &v)| mu * c + (T::one() - mu) * v).collect();
        // Antipodal center and sample with mu = 0.5 cancel exactly; fall back to the sample.
        normalize_slice(&mixed).unwrap_or_else(|_| x.to_vec())
    }

    /// Momentum update of the labeled center, or nearest-or-spawn for unlabeled samples.
    pub fn update(&mut self, x: &[T], label: IdentityLabel) -> Result<()> {
        self.check_dim(x)?;
        let x = normalize_slice(x)?;
        match label {
            IdentityLabel::Labeled(v) => {
                let j = self.label_index(v)?;
                self.labeled[j] = self.blend(&self.labeled[j], &x);
            }
            IdentityLabel::Unlabeled => {
                let nearest = self
                    .unlabeled
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (i, dot(c, &x)))
                    .fold(None, |best: Option<(usize, T)>, (i, s)| match best {
                        Some((_, bs)) if bs >= s => best,
                        _ => Some((i, s)),
                    });
                match nearest {
                    Some((i, s)) if s >= self.new_center_threshold => self.unlabeled[i] = self.blend(&self.unlabeled[i], &x),
                    _ => self.unlabeled.push(x),
                }
            }
        }
        Ok(())
    }

    pub fn label_index(&self, v: u32) -> Result<usize> {
        match (v as usize).checked_sub(1) {
            Some(j) if j < self.labeled.len() => Ok(j),
            _ => Err(DetectError::InvalidLabel { label: v, m: self.labeled.len() }),
        }
    }

    /// Every center except labeled center `positive`, labeled first.
    pub fn negatives(&self, positive: usize) -> Vec<&[T]> {
        self.labeled
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != positive)
            .map(|(_, c)| c.as_slice())
            .chain(self.unlabeled.iter().map(Vec::as_slice))
            .collect()
    }

    pub fn max_norm_error(&self) -> f64 {
        self.labeled
            .iter()
            .chain(&self.unlabeled)
            .map(|c| (dot(c, c).sqrt() - T::one()).abs().to_f64_lossy())
            .fold(0.0, f64::max)
    }
}

pub fn update_memory<T: Scalar>(mut mem: IdentityMemory<T>, x: &[T], label: IdentityLabel) -> Result<IdentityMemory<T>> {
    mem.update(x, label)?;
    Ok(mem)
}
