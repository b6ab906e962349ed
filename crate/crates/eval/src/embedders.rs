use ps_core::ImageBuf;
use ps_data::ToyOracle;

use crate::search::Embedder;
use crate::Result;

/// Reference embedder for toy scenes: the oracle's per-identity palette
/// coverage scores. Gives an upper bound for a learned embedder.
#[derive(Debug, Clone)]
pub struct PaletteEmbedder {
    pub oracle: ToyOracle,
    pub crop: (usize, usize),
}

impl PaletteEmbedder {
    pub fn new(oracle: ToyOracle) -> Self {
        PaletteEmbedder { oracle, crop: (64, 32) }
    }
}

impl Embedder for PaletteEmbedder {
    fn crop_size(&self) -> (usize, usize) {
        self.crop
    }

    fn embed(&self, crops: &[&ImageBuf<f32>]) -> Result<Vec<Vec<f64>>> {
        Ok(crops
            .iter()
            .map(|c| {
                let s: Vec<f64> = self.oracle.appearance_scores(c).into_iter().map(f64::from).collect();
                let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    s.into_iter().map(|v| v / n).collect()
                } else {
                    s
                }
            })
            .collect())
    }
}
