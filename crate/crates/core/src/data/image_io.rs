//! Decoding raster files into normalized single-channel samples.

use std::path::Path;

use crate::error::{Error, Result};

/// One grayscale image, `height x width` row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub label: Option<usize>,
    /// Binary mask with values exactly 0 or 1, same shape as `pixels`.
    pub mask: Option<Vec<u8>>,
}

impl ImageSample {
    pub fn new(pixels: Vec<f32>, height: usize, width: usize) -> Self {
        assert_eq!(pixels.len(), height * width);
        ImageSample {
            pixels,
            height,
            width,
            label: None,
            mask: None,
        }
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    if sh == dh && sw == dw {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(dh * dw);
    let sy = sh as f64 / dh as f64;
    let sx = sw as f64 / dw as f64;
    for i in 0..dh {
        let y = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = y - y0 as f64;
        for j in 0..dw {
            let x = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = x - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Nearest-neighbour resampling for label maps.
pub fn resize_nearest(src: &[u8], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<u8> {
    if sh == dh && sw == dw {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(dh * dw);
    for i in 0..dh {
        let y = (((i as f64 + 0.5) * sh as f64 / dh as f64).floor() as usize).min(sh - 1);
        for j in 0..dw {
            let x = (((j as f64 + 0.5) * sw as f64 / dw as f64).floor() as usize).min(sw - 1);
            out.push(src[y * sw + x]);
        }
    }
    out
}

/// Per-image min-max normalization to `[0, 1]`; constant images become zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f32> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)) as f32).clamp(0.0, 1.0))
        .collect()
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Image {
            path: path.to_path_buf(),
            message: "zero-sized image".into(),
        });
    }
    Ok(img)
}

/// Loads an image as single channel, resized to `working_size` square and
/// min-max normalized. Color inputs are reduced by averaging R, G and B.
pub fn load_image(path: &Path, working_size: usize) -> Result<ImageSample> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray: Vec<f64> = if img.color().has_color() {
        img.to_rgb32f()
            .pixels()
            .map(|p| (p.0[0] as f64 + p.0[1] as f64 + p.0[2] as f64) / 3.0)
            .collect()
    } else {
        img.to_luma32f().pixels().map(|p| p.0[0] as f64).collect()
    };
    let resized = resize_bilinear(&gray, h, w, working_size, working_size);
    Ok(ImageSample::new(min_max_normalize(&resized), working_size, working_size))
}

/// Loads a binary mask (nonzero = foreground), nearest-resized to `working_size`.
pub fn load_mask(path: &Path, working_size: usize) -> Result<Vec<u8>> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let luma = img.to_luma16();
    let bits: Vec<u8> = luma.pixels().map(|p| u8::from(p.0[0] != 0)).collect();
    Ok(resize_nearest(&bits, h, w, working_size, working_size))
}

/// Quantizes `[0, 1]` values to 8 bits and writes a grayscale PNG.
pub fn save_gray_png(path: &Path, pixels: &[f32], height: usize, width: usize) -> Result<()> {
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    save_gray_bytes(path, &bytes, height, width)
}

/// Writes raw 8-bit grayscale bytes as PNG.
pub fn save_gray_bytes(path: &Path, bytes: &[u8], height: usize, width: usize) -> Result<()> {
    image::save_buffer(path, bytes, width as u32, height as u32, image::ExtendedColorType::L8).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })
}

/// Writes an RGB PNG from interleaved bytes.
pub fn save_rgb_png(path: &Path, rgb: &[u8], height: usize, width: usize) -> Result<()> {
    image::save_buffer(path, rgb, width as u32, height as u32, image::ExtendedColorType::Rgb8).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_normalizes_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        save_gray_bytes(&p, &vec![77u8; 512 * 512], 512, 512).unwrap();
        let s = load_image(&p, 256).unwrap();
        assert_eq!((s.height, s.width), (256, 256));
        assert!(s.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_min_max() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        save_gray_bytes(&p, &[10, 20, 30, 40], 2, 2).unwrap();
        let s = load_image(&p, 2).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in s.pixels.iter().zip(expect) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn full_range_image_is_returned_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.png");
        let bytes: Vec<u8> = (0..256 * 256).map(|i| ((i * 31 + i / 256) % 256) as u8).collect();
        save_gray_bytes(&p, &bytes, 256, 256).unwrap();
        let s = load_image(&p, 256).unwrap();
        for (a, &b) in s.pixels.iter().zip(&bytes) {
            assert_eq!(*a, b as f32 / 255.0);
        }
    }

    #[test]
    fn rgb_input_uses_channel_average() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let rgb = [0, 0, 0, 255, 0, 0, 255, 255, 0, 255, 255, 255];
        save_rgb_png(&p, &rgb, 2, 2).unwrap();
        let s = load_image(&p, 2).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in s.pixels.iter().zip(expect) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn undecodable_file_is_an_image_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(load_image(&p, 8), Err(Error::Image { .. })));
    }

    #[test]
    fn bilinear_downsample_of_ramp_is_monotone() {
        let src: Vec<f64> = (0..16).map(|i| (i % 4) as f64).collect();
        let out = resize_bilinear(&src, 4, 4, 2, 2);
        assert_eq!(out, vec![0.5, 2.5, 0.5, 2.5]);
    }
}
