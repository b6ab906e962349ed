use serde::{Deserialize, Serialize};

use crate::{Result, SynthError};

/// Layer widths and strides of every network. Both built-in profiles share
/// one topology: five appearance convolutions, four structure convolutions
/// plus residual blocks, residual AdaIN blocks plus four decoder
/// convolutions, and a four-layer discriminator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanProfile {
    pub name: String,
    pub crop_h: usize,
    pub crop_w: usize,
    pub app_widths: Vec<usize>,
    pub app_strides: Vec<usize>,
    /// Spatial size of the pooled appearance code.
    pub app_pool: [usize; 2],
    pub str_widths: Vec<usize>,
    pub str_strides: Vec<usize>,
    pub str_res_blocks: usize,
    pub dec_res_blocks: usize,
    /// Output widths of the decoder convolutions; the last must be 3.
    pub dec_widths: Vec<usize>,
    /// Output widths of the discriminator convolutions; the last must be 1.
    pub disc_widths: Vec<usize>,
}

impl GanProfile {
    pub fn toy() -> Self {
        GanProfile {
            name: "toy".into(),
            crop_h: 64,
            crop_w: 32,
            app_widths: vec![16, 32, 64, 128, 256],
            app_strides: vec![2, 2, 2, 2, 1],
            app_pool: [4, 1],
            str_widths: vec![16, 32, 32, 32],
            str_strides: vec![1, 2, 2, 1],
            str_res_blocks: 4,
            dec_res_blocks: 4,
            dec_widths: vec![16, 16, 16, 3],
            disc_widths: vec![16, 32, 64, 1],
        }
    }

    pub fn full() -> Self {
        GanProfile {
            name: "full".into(),
            crop_h: 256,
            crop_w: 128,
            app_widths: vec![64, 128, 256, 512, 2048],
            app_strides: vec![2, 2, 2, 2, 2],
            app_pool: [4, 1],
            str_widths: vec![32, 64, 128, 128],
            str_strides: vec![1, 2, 2, 1],
            str_res_blocks: 4,
            dec_res_blocks: 4,
            dec_widths: vec![64, 32, 32, 3],
            disc_widths: vec![64, 128, 256, 1],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "full" => Ok(Self::full()),
            other => Err(SynthError::Profile(format!("unknown profile {other:?} (expected toy or full)"))),
        }
    }

    pub fn app_code_shape(&self) -> [usize; 3] {
        [*self.app_widths.last().unwrap_or(&0), self.app_pool[0], self.app_pool[1]]
    }

    pub fn str_code_shape(&self) -> [usize; 3] {
        let s: usize = self.str_strides.iter().product();
        [*self.str_widths.last().unwrap_or(&0), self.crop_h / s.max(1), self.crop_w / s.max(1)]
    }

    pub fn app_flat_dim(&self) -> usize {
        self.app_code_shape().iter().product()
    }

    /// Number of x2 upsampling steps the decoder needs to return to crop size.
    pub fn upsample_steps(&self) -> usize {
        self.str_strides.iter().product::<usize>().trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Profile(format!("{}: {m}", self.name)));
        if self.app_widths.len() != 5 || self.app_strides.len() != 5 {
            return bad("appearance encoder needs five convolutions".into());
        }
        if self.str_widths.len() != 4 || self.str_strides.len() != 4 {
            return bad("structure encoder needs four convolutions".into());
        }
        if self.dec_widths.len() != 4 || self.dec_widths[3] != 3 {
            return bad("decoder needs four convolutions ending in 3 channels".into());
        }
        if self.disc_widths.len() != 4 || self.disc_widths[3] != 1 {
            return bad("discriminator needs four convolutions ending in 1 channel".into());
        }
        if self.app_strides.iter().chain(&self.str_strides).any(|&s| s != 1 && s != 2) {
            return bad("strides must be 1 or 2".into());
        }
        let s: usize = self.str_strides.iter().product();
        if self.crop_h % s != 0 || self.crop_w % s != 0 || self.upsample_steps() > 4 {
            return bad(format!("crop {}x{} not divisible by structure stride {s}", self.crop_h, self.crop_w));
        }
        let a: usize = self.app_strides.iter().product();
        let (ah, aw) = (self.crop_h / a, self.crop_w / a);
        if ah < self.app_pool[0] || aw < self.app_pool[1] || self.crop_h % a != 0 || self.crop_w % a != 0 {
            return bad(format!("appearance feature map {ah}x{aw} smaller than pool {:?}", self.app_pool));
        }
        if self.str_widths.iter().chain(&self.app_widths).chain(&self.dec_widths).chain(&self.disc_widths).any(|&w| w == 0) {
            return bad("zero-width layer".into());
        }
        Ok(())
    }
}
