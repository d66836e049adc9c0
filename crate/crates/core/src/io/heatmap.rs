//! Grayscale attention heatmaps as binary PGM.

use std::path::Path;

use crate::aggregate::minmax_norm;
use crate::backbone::PATCH_SIZE;
use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.pgm_bytes())?;
        Ok(())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(path, &self.pixels, self.width as u32, self.height as u32, image::ColorType::L8)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }
}

/// `round(255·v)` for `v` clamped to `[0, 1]`.
pub fn to_gray(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Nearest-neighbor upsampling of a `rows×cols` patch grid to pixel size.
pub fn render_grid(values: &[f64], rows: usize, cols: usize) -> Result<GrayImage> {
    if values.len() != rows * cols {
        return Err(Error::shape(format!("{} values for a {rows}x{cols} grid", values.len())));
    }
    let (width, height) = (cols * PATCH_SIZE, rows * PATCH_SIZE);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            pixels.push(to_gray(values[(y / PATCH_SIZE) * cols + x / PATCH_SIZE]));
        }
    }
    Ok(GrayImage { width, height, pixels })
}

/// Per-level map, minmax-normalized for display; a constant map renders black.
pub fn render_level_map(map: &[f64], rows: usize, cols: usize) -> Result<GrayImage> {
    render_grid(&minmax_norm(map), rows, cols)
}

/// White where the fused mask strictly exceeds `tau`.
pub fn render_key_mask(fused: &[f64], tau: f64, rows: usize, cols: usize) -> Result<GrayImage> {
    let mask: Vec<f64> = fused.iter().map(|&a| if a > tau { 1.0 } else { 0.0 }).collect();
    render_grid(&mask, rows, cols)
}
