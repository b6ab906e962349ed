use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid bounding box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },
    #[error("detection score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("box does not intersect the {width}x{height} image")]
    EmptyCrop { width: usize, height: usize },
    #[error("cannot normalize a zero-norm vector")]
    ZeroNorm,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("image buffer has {got} values, expected {expected}")]
    ImageSize { expected: usize, got: usize },
    #[error("requested output size {0}x{1} is empty")]
    EmptyOutput(usize, usize),
}
