use serde::{Deserialize, Serialize};

use crate::{BoundingBox, CoreError, IdentityLabel, Result, Scalar};

/// Planar (channel-major) image. `data[c * height * width + y * width + x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBuf<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ImageBuf<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(CoreError::ImageSize { expected, got: data.len() });
        }
        Ok(ImageBuf { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        ImageBuf { channels, height, width, data: vec![value; channels * height * width] }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        let (h, w) = (self.height, self.width);
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|&v| v >= T::zero() && v <= T::one())
    }

    pub fn cast<U: Scalar>(&self) -> ImageBuf<U> {
        ImageBuf {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Sample channel `c` at continuous pixel-center coordinates with edge clamping.
    fn bilinear(&self, c: usize, sy: T, sx: T) -> T {
        let max_y = T::lit((self.height - 1) as f64);
        let max_x = T::lit((self.width - 1) as f64);
        let sy = sy.max(T::zero()).min(max_y);
        let sx = sx.max(T::zero()).min(max_x);
        let y0 = sy.floor();
        let x0 = sx.floor();
        let fy = sy - y0;
        let fx = sx - x0;
        let y0 = y0.to_usize().unwrap_or(0);
        let x0 = x0.to_usize().unwrap_or(0);
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let one = T::one();
        let top = self.get(c, y0, x0) * (one - fx) + self.get(c, y0, x1) * fx;
        let bottom = self.get(c, y1, x0) * (one - fx) + self.get(c, y1, x1) * fx;
        top * (one - fy) + bottom * fy
    }
}

/// A resized person crop with its identity and the frame it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonCrop<T> {
    pub pixels: ImageBuf<T>,
    pub identity: IdentityLabel,
    pub source: String,
}

/// Bilinear crop with half-pixel centers. The box is clipped to the image first.
pub fn crop_and_resize<T: Scalar>(
    image: &ImageBuf<T>,
    bbox: &BoundingBox<T>,
    out_h: usize,
    out_w: usize,
) -> Result<ImageBuf<T>> {
    bbox.validate()?;
    if out_h == 0 || out_w == 0 {
        return Err(CoreError::EmptyOutput(out_h, out_w));
    }
    let clipped = bbox
        .clip(T::lit(image.width as f64), T::lit(image.height as f64))
        .ok_or(CoreError::EmptyCrop { width: image.width, height: image.height })?;
    let half = T::lit(0.5);
    let sy_scale = clipped.height() / T::lit(out_h as f64);
    let sx_scale = clipped.width() / T::lit(out_w as f64);
    let mut out = ImageBuf::filled(image.channels, out_h, out_w, T::zero());
    for oy in 0..out_h {
        let sy = clipped.y1 + (T::lit(oy as f64) + half) * sy_scale - half;
        for ox in 0..out_w {
            let sx = clipped.x1 + (T::lit(ox as f64) + half) * sx_scale - half;
            for c in 0..image.channels {
                out.set(c, oy, ox, image.bilinear(c, sy, sx));
            }
        }
    }
    Ok(out)
}
