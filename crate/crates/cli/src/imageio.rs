//! 8-bit RGB files to and from `[3, H, W]` tensors in `[0, 1]`.

use std::path::Path;

use image::{GrayImage, RgbImage};
use mmht_core::{ImageRgb, Tensor};

use crate::error::{CliError, Result};

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pnm", "pgm"];

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_rgb8(img: &RgbImage) -> ImageRgb<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    })
}

pub fn to_rgb8(img: &ImageRgb<f32>) -> Result<RgbImage> {
    let (c, h, w) = img.chw()?;
    if c != 3 {
        return Err(CliError::runtime(format!("cannot encode a {c}-channel image as RGB")));
    }
    let d = img.data();
    let buf = (0..h * w * 3).map(|i| quantize(d[(i % 3) * h * w + i / 3])).collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to dims"))
}

pub fn read_image(path: &Path) -> Result<ImageRgb<f32>> {
    let img = image::open(path).map_err(|e| CliError::at(path, e))?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// Clips to `[0, 1]`, quantizes, and encodes by file extension.
pub fn write_image(path: &Path, img: &ImageRgb<f32>) -> Result<()> {
    to_rgb8(img)?
        .save(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Writes a single `h x w` plane with values in `[0, 1]`.
pub fn write_gray(path: &Path, plane: &[f32], h: usize, w: usize) -> Result<()> {
    let buf = plane.iter().map(|&v| quantize(v)).collect();
    GrayImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| CliError::runtime("heatmap buffer does not match its dims"))?
        .save(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}
