//! Image decoding and resizing into `H×W×3` tensors with values in `[0, 1]`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// How a source image of a different aspect ratio is fitted to the target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    /// Scale each axis independently.
    #[default]
    Stretch,
    /// Center-crop to the target aspect ratio, then scale.
    Crop,
}

impl fmt::Display for ResizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResizeMode::Stretch => "stretch",
            ResizeMode::Crop => "crop",
        })
    }
}

impl FromStr for ResizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stretch" => Ok(ResizeMode::Stretch),
            "crop" => Ok(ResizeMode::Crop),
            other => Err(Error::config(format!("unknown resize mode `{other}`"))),
        }
    }
}

/// Parses `WIDTHxHEIGHT`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::config(format!("size `{s}` is not WIDTHxHEIGHT"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

/// Interleaved RGB bytes to a `[0, 1]` tensor.
pub fn rgb8_to_tensor(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor<f32>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::shape(format!("{} bytes for a {width}x{height} RGB image", rgb.len())));
    }
    Tensor::new(&[height, width, 3], rgb.iter().map(|&b| b as f32 / 255.0).collect())
}

/// Corner-aligned bilinear sampling: the first and last pixel centers of
/// source and target coincide along each axis.
pub fn resize_bilinear(src: &Tensor<f32>, width: usize, height: usize) -> Result<Tensor<f32>> {
    let (sh, sw, c) = src.dims3()?;
    if (sh, sw) == (height, width) {
        return Ok(src.clone());
    }
    let axis = |dst: usize, len: usize| -> Vec<(usize, usize, f32)> {
        (0..dst)
            .map(|i| {
                let x = if dst > 1 { i as f64 * (len - 1) as f64 / (dst - 1) as f64 } else { (len - 1) as f64 / 2.0 };
                let x0 = (x.floor() as usize).min(len - 1);
                let x1 = (x0 + 1).min(len - 1);
                (x0, x1, (x - x0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(height, sh);
    let xs = axis(width, sw);
    let data = src.data();
    let at = |y: usize, x: usize, k: usize| data[(y * sw + x) * c + k];
    let mut out = Vec::with_capacity(height * width * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for k in 0..c {
                let top = at(y0, x0, k) * (1.0 - fx) + at(y0, x1, k) * fx;
                let bottom = at(y1, x0, k) * (1.0 - fx) + at(y1, x1, k) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[height, width, c], out)
}

/// Central window of `src` with the aspect ratio `width:height`.
pub fn center_crop_to_aspect(src: &Tensor<f32>, width: usize, height: usize) -> Result<Tensor<f32>> {
    let (sh, sw, c) = src.dims3()?;
    // Compare sw/sh with width/height in integers.
    let (cw, ch) = if sw * height > width * sh {
        ((sh * width / height).max(1), sh)
    } else {
        (sw, (sw * height / width).max(1))
    };
    let (ox, oy) = ((sw - cw) / 2, (sh - ch) / 2);
    let data = src.data();
    let mut out = Vec::with_capacity(cw * ch * c);
    for y in oy..oy + ch {
        out.extend_from_slice(&data[(y * sw + ox) * c..(y * sw + ox + cw) * c]);
    }
    Tensor::new(&[ch, cw, c], out)
}

pub fn fit_image(src: &Tensor<f32>, width: usize, height: usize, mode: ResizeMode) -> Result<Tensor<f32>> {
    match mode {
        ResizeMode::Stretch => resize_bilinear(src, width, height),
        ResizeMode::Crop => resize_bilinear(&center_crop_to_aspect(src, width, height)?, width, height),
    }
}

/// Decodes PNG, JPEG or PNM at its native size.
pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    rgb8_to_tensor(w as usize, h as usize, img.as_raw())
}

pub fn load_image(path: &Path, width: usize, height: usize, mode: ResizeMode) -> Result<Tensor<f32>> {
    fit_image(&decode_image(path)?, width, height, mode)
}

/// Writes a `[0, 1]` tensor as 8-bit RGB; the format follows the extension.
pub fn save_rgb(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (h, w, c) = image.dims3()?;
    if c != 3 {
        return Err(Error::shape("expected three channels"));
    }
    let bytes: Vec<u8> = image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::save_buffer(path, &bytes, w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
