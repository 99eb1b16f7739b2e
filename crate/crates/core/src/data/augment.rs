//! Label-preserving augmentation applied before corruption: horizontal flip
//! followed by a random square resized crop.

use rand::Rng as _;

use crate::data::image_io::ImageSample;
use crate::rng::Rng;

pub const FLIP_PROBABILITY: f64 = 0.5;
pub const CROP_SCALE: (f64, f64) = (0.8, 1.0);

/// One concrete draw of the augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Fraction of the image area kept by the crop.
    pub scale: f64,
    /// Crop offset as a fraction of the free space, in `[0, 1]`.
    pub offset_y: f64,
    pub offset_x: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            flip: false,
            scale: 1.0,
            offset_y: 0.0,
            offset_x: 0.0,
        }
    }

    pub fn sample(rng: &mut Rng) -> Self {
        let flip = rng.random_bool(FLIP_PROBABILITY);
        let scale = rng.random_range(CROP_SCALE.0..=CROP_SCALE.1);
        AugmentParams {
            flip,
            scale,
            offset_y: rng.random::<f64>(),
            offset_x: rng.random::<f64>(),
        }
    }
}

/// Applies `params` to an `h x w` image.
pub fn apply_augment(pixels: &[f32], h: usize, w: usize, params: &AugmentParams) -> Vec<f32> {
    let flipped: Vec<f32> = if params.flip {
        pixels
            .chunks_exact(w)
            .flat_map(|row| row.iter().rev().copied())
            .collect()
    } else {
        pixels.to_vec()
    };
    if params.scale >= 1.0 {
        return flipped;
    }
    let side = params.scale.sqrt();
    let (ch, cw) = (side * h as f64, side * w as f64);
    let top = params.offset_y * (h as f64 - ch);
    let left = params.offset_x * (w as f64 - cw);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let y = (top + (i as f64 + 0.5) * ch / h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for j in 0..w {
            let x = (left + (j as f64 + 0.5) * cw / w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            let px = |r: usize, c: usize| flipped[r * w + c] as f64;
            let v = (px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx) * (1.0 - fy)
                + (px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx) * fy;
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    out
}

/// Draws parameters from `rng` and augments the pixels; label and mask are
/// carried over unchanged.
pub fn augment(sample: &ImageSample, rng: &mut Rng) -> ImageSample {
    let params = AugmentParams::sample(rng);
    ImageSample {
        pixels: apply_augment(&sample.pixels, sample.height, sample.width, &params),
        ..sample.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn asymmetric(n: usize) -> ImageSample {
        ImageSample::new((0..n * n).map(|i| (i as f32) / (n * n) as f32).collect(), n, n)
    }

    #[test]
    fn identity_params_leave_pixels_untouched() {
        let s = asymmetric(8);
        assert_eq!(apply_augment(&s.pixels, 8, 8, &AugmentParams::identity()), s.pixels);
    }

    #[test]
    fn forced_flip_reverses_columns() {
        let s = asymmetric(4);
        let p = AugmentParams {
            flip: true,
            ..AugmentParams::identity()
        };
        let out = apply_augment(&s.pixels, 4, 4, &p);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(out[i * 4 + j], s.pixels[i * 4 + (3 - j)]);
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let s = asymmetric(16);
        let a = augment(&s, &mut substream(9, &[1]));
        let b = augment(&s, &mut substream(9, &[1]));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn stays_in_unit_range_and_keeps_supervision(seed in any::<u64>(), label in 0usize..4) {
            let mut s = asymmetric(12);
            s.pixels[0] = 1.0;
            s.label = Some(label);
            s.mask = Some((0..144).map(|i| (i % 3 == 0) as u8).collect());
            let out = augment(&s, &mut substream(seed, &[]));
            prop_assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(out.label, s.label);
            prop_assert_eq!(out.mask, s.mask);
            prop_assert_eq!(out.pixels.len(), 144);
        }
    }
}
