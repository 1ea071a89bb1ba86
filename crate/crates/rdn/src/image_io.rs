//! 8-bit PNG load and save.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, RgbImage};
use rdn_core::{Shape, Tensor4};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Decode { path: PathBuf, source: image::ImageError },
    #[error("{path}: unsupported pixel format {format:?}; expected 8-bit RGB or grayscale PNG")]
    Unsupported { path: PathBuf, format: image::ColorType },
    #[error("{path}: {source}")]
    Encode { path: PathBuf, source: image::ImageError },
    #[error("cannot save tensor of shape {0}: expected one 3-channel image")]
    Shape(Shape),
}

/// Reads a PNG as `[1, 3, h, w]` with values `byte / 255`. Grayscale is
/// replicated across the three channels.
pub fn load_png(path: &Path) -> Result<Tensor4<f32>, ImageError> {
    let decoded = image::ImageReader::open(path)
        .map_err(|e| ImageError::Decode { path: path.into(), source: image::ImageError::IoError(e) })?
        .with_guessed_format()
        .map_err(|e| ImageError::Decode { path: path.into(), source: image::ImageError::IoError(e) })?;
    if decoded.format() != Some(ImageFormat::Png) {
        return Err(ImageError::Decode {
            path: path.into(),
            source: image::ImageError::Unsupported(image::error::ImageFormatHint::PathExtension(path.into()).into()),
        });
    }
    let img = decoded.decode().map_err(|source| ImageError::Decode { path: path.into(), source })?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageLuma8(_) => img.to_rgb8(),
        other => return Err(ImageError::Unsupported { path: path.into(), format: other.color() }),
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(Tensor4::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
        .expect("decoded images are non-empty"))
}

/// Quantizes `[0, 1]` values to bytes with rounding; out-of-range values are clamped.
pub fn to_bytes(img: &Tensor4<f32>) -> Result<RgbImage, ImageError> {
    let s = img.shape();
    if s.n != 1 || s.c != 3 {
        return Err(ImageError::Shape(s));
    }
    let mut raw = vec![0u8; s.h * s.w * 3];
    for c in 0..3 {
        for y in 0..s.h {
            for x in 0..s.w {
                let v = img.get(0, c, y, x);
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                raw[(y * s.w + x) * 3 + c] = (v * 255.0).round() as u8;
            }
        }
    }
    Ok(RgbImage::from_raw(s.w as u32, s.h as u32, raw).expect("buffer sized to image"))
}

pub fn save_png(path: &Path, img: &Tensor4<f32>) -> Result<(), ImageError> {
    to_bytes(img)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| ImageError::Encode { path: path.into(), source })
}
