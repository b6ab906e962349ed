use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ps_core::ImageBuf;

/// Reads an 8-bit PNG (RGB, RGBA, gray) as a planar RGB image in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<ImageBuf<f32>, String> {
    let file = File::open(path).map_err(|e| e.to_string())?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let step = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(format!("unsupported color type {other:?}")),
    };
    let mut img = ImageBuf::filled(3, h, w, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let px = &buf[(y * w + x) * step..];
            for c in 0..3 {
                let v = if step >= 3 { px[c] } else { px[0] };
                img.set(c, y, x, v as f32 / 255.0);
            }
        }
    }
    Ok(img)
}

pub fn to_rgb8(img: &ImageBuf<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.height * img.width * 3);
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                let c = c.min(img.channels - 1);
                out.push((img.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

/// Writes an 8-bit RGB PNG. Values are clamped to `[0, 1]` and rounded.
pub fn write_png(path: &Path, img: &ImageBuf<f32>) -> std::io::Result<()> {
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(std::io::Error::other)?;
    w.write_image_data(&to_rgb8(img)).map_err(std::io::Error::other)?;
    Ok(())
}
