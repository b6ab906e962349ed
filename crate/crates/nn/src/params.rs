use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use ps_core::Scalar;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Tensor;

/// Named parameter tensors belonging to one network.
///
/// `id` distinguishes sets on a shared tape; networks trained together must
/// use distinct ids.
#[derive(Debug, Clone)]
pub struct ParamSet<T> {
    pub id: usize,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(id: usize) -> Self {
        ParamSet { id, names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Uniform(-b, b) init with `b = gain * sqrt(3 / fan_in)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> usize {
        let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Order-sensitive hash of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            name.hash(&mut h);
            t.shape.hash(&mut h);
            for v in &t.data {
                v.to_f64_lossy().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { id: self.id, names: self.names.clone(), tensors: self.tensors.iter().map(|t| t.cast()).collect() }
    }
}

/// Parameter gradients produced by one backward pass, keyed by (set id, index).
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    pub(crate) map: HashMap<(usize, usize), Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, set: usize, index: usize) -> Option<&Tensor<T>> {
        self.map.get(&(set, index))
    }

    pub fn for_set(&self, set: &ParamSet<T>) -> Vec<Option<&Tensor<T>>> {
        (0..set.len()).map(|i| self.get(set.id, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(|t| t.is_finite())
    }

    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data.iter())
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales every gradient so the global L2 norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let n = self.global_norm();
        if n > max_norm && n.is_finite() {
            let s = T::lit(max_norm / n);
            for t in self.map.values_mut() {
                t.data.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn merge(&mut self, other: Gradients<T>) {
        for (k, v) in other.map {
            match self.map.get_mut(&k) {
                Some(t) => t.add_assign(&v),
                None => {
                    self.map.insert(k, v);
                }
            }
        }
    }
}
