use serde::{Deserialize, Serialize};

use crate::{CoreError, Result, Scalar};

/// Axis-aligned box in corner form. The right and bottom edges are exclusive,
/// so a box covering pixels `0..10` has `x1 = 0, x2 = 10` and width 10.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let b = BoundingBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let reason = if ![self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) {
            Some("non-finite coordinate")
        } else if self.x2 <= self.x1 {
            Some("x2 must exceed x1")
        } else if self.y2 <= self.y1 {
            Some("y2 must exceed y1")
        } else {
            None
        };
        match reason {
            None => Ok(()),
            Some(reason) => Err(CoreError::InvalidBox {
                x1: self.x1.to_f64_lossy(),
                y1: self.y1.to_f64_lossy(),
                x2: self.x2.to_f64_lossy(),
                y2: self.y2.to_f64_lossy(),
                reason,
            }),
        }
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    /// Intersection with `[0, width) x [0, height)`, or `None` when empty.
    pub fn clip(&self, width: T, height: T) -> Option<Self> {
        let b = BoundingBox {
            x1: self.x1.max(T::zero()),
            y1: self.y1.max(T::zero()),
            x2: self.x2.min(width),
            y2: self.y2.min(height),
        };
        (b.x2 > b.x1 && b.y2 > b.y1).then_some(b)
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox {
            x1: U::lit(self.x1.to_f64_lossy()),
            y1: U::lit(self.y1.to_f64_lossy()),
            x2: U::lit(self.x2.to_f64_lossy()),
            y2: U::lit(self.y2.to_f64_lossy()),
        }
    }
}

/// Intersection over union of two valid boxes.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> Result<T> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok((inter / union).max(T::zero()).min(T::one()))
}

/// Person identity. Labeled values are contiguous in `1..=M` after ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IdentityLabel {
    Labeled(u32),
    Unlabeled,
}

impl IdentityLabel {
    pub fn from_option(v: Option<u32>) -> Self {
        v.map_or(IdentityLabel::Unlabeled, IdentityLabel::Labeled)
    }

    pub fn as_option(self) -> Option<u32> {
        match self {
            IdentityLabel::Labeled(v) => Some(v),
            IdentityLabel::Unlabeled => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        matches!(self, IdentityLabel::Labeled(_))
    }

    /// Zero-based class index for a labeled identity.
    pub fn class_index(self) -> Option<usize> {
        self.as_option().and_then(|v| (v as usize).checked_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<T> {
    pub bbox: BoundingBox<T>,
    pub score: T,
    pub identity: Option<IdentityLabel>,
}

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: BoundingBox<T>, score: T) -> Result<Self> {
        bbox.validate()?;
        if !(score >= T::zero() && score <= T::one()) {
            return Err(CoreError::InvalidScore(score.to_f64_lossy()));
        }
        Ok(Detection { bbox, score, identity: None })
    }

    pub fn with_identity(mut self, identity: IdentityLabel) -> Self {
        self.identity = Some(identity);
        self
    }
}
