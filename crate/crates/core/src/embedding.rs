use serde::{Deserialize, Serialize};

use crate::{CoreError, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector<T> {
    pub values: Vec<T>,
    pub normalized: bool,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("embedding"));
        }
        Ok(EmbeddingVector { values, normalized: false })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.values, &other.values)
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Returns the unit vector in the direction of `v`.
pub fn l2_normalize<T: Scalar>(v: &EmbeddingVector<T>) -> Result<EmbeddingVector<T>> {
    let values = normalize_slice(&v.values)?;
    Ok(EmbeddingVector { values, normalized: true })
}

pub fn normalize_slice<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite("embedding"));
    }
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if n <= T::zero() {
        return Err(CoreError::ZeroNorm);
    }
    Ok(v.iter().map(|&x| x / n).collect())
}
