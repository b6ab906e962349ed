//! Appearance/structure pairings for synthesis training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ps_core::{IdentityLabel, PersonCrop};

use crate::{DataError, Result};

/// Yields `(appearance, structure)` index pairs over a crop list, so that the
/// two crops of a pair always carry different labeled identities.
///
/// Every epoch visits each labeled crop once as the appearance provider, in a
/// fresh random order; its partner is drawn uniformly from crops of other
/// identities.
#[derive(Debug, Clone)]
pub struct PairSampler {
    labels: Vec<u32>,
    labeled: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(labels: &[IdentityLabel], seed: u64) -> Result<Self> {
        let labels: Vec<u32> = labels.iter().map(|l| l.as_option().unwrap_or(0)).collect();
        let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
        let mut distinct: Vec<u32> = labeled.iter().map(|&i| labels[i]).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(DataError::InsufficientDiversity(distinct.len()));
        }
        Ok(PairSampler { labels, labeled, order: Vec::new(), cursor: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn from_crops<T>(crops: &[PersonCrop<T>], seed: u64) -> Result<Self> {
        let labels: Vec<IdentityLabel> = crops.iter().map(|c| c.identity).collect();
        Self::new(&labels, seed)
    }

    pub fn epoch_len(&self) -> usize {
        self.labeled.len()
    }

    pub fn next_pair(&mut self) -> (usize, usize) {
        if self.cursor == self.order.len() {
            self.order = self.labeled.clone();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let a = self.order[self.cursor];
        self.cursor += 1;
        loop {
            let b = self.labeled[self.rng.gen_range(0..self.labeled.len())];
            if self.labels[b] != self.labels[a] {
                return (a, b);
            }
        }
    }

    pub fn batch(&mut self, n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|_| self.next_pair()).collect()
    }
}

/// The first `batch` pairs of a seeded sampler over `crops`, as crop indices.
pub fn sample_training_pairs<T>(crops: &[PersonCrop<T>], batch: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    Ok(PairSampler::from_crops(crops, seed)?.batch(batch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[Option<u32>]) -> Vec<IdentityLabel> {
        v.iter().map(|&o| IdentityLabel::from_option(o)).collect()
    }

    fn crops(l: &[IdentityLabel]) -> Vec<PersonCrop<f32>> {
        l.iter()
            .map(|&identity| PersonCrop { pixels: ps_core::ImageBuf::filled(3, 2, 2, 0.5), identity, source: String::new() })
            .collect()
    }

    #[test]
    fn pairs_cross_identities_and_cover_epoch() {
        let l = labels(&[Some(1), Some(2), Some(1), None, Some(3), Some(2)]);
        let pairs = sample_training_pairs(&crops(&l), 5, 3).unwrap();
        assert_eq!(pairs.len(), 5);
        let mut firsts: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        firsts.sort_unstable();
        assert_eq!(firsts, vec![0, 1, 2, 4, 5]);
        for (a, b) in pairs {
            assert_ne!(l[a], l[b]);
            assert!(l[b].is_labeled());
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let l = labels(&[Some(1), Some(2), Some(3), Some(1)]);
        assert_eq!(sample_training_pairs(&crops(&l), 12, 9).unwrap(), sample_training_pairs(&crops(&l), 12, 9).unwrap());
    }

    #[test]
    fn one_identity_is_rejected() {
        let l = labels(&[Some(4), Some(4), None]);
        assert!(matches!(sample_training_pairs(&crops(&l), 4, 0), Err(DataError::InsufficientDiversity(1))));
    }
}
