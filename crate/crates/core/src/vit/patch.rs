//! Splitting images into flattened square patches and back.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Splits an `h x w` row-major image into `(h/p)*(w/p)` rows of `p*p` pixels.
///
/// Patches are ordered row-major over the patch grid; each patch is flattened
/// row-major.
pub fn patchify<T: Scalar>(image: &[T], h: usize, w: usize, p: usize) -> Result<Vec<T>> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!("{h}x{w} image not divisible into {p}x{p} patches")));
    }
    if image.len() != h * w {
        return Err(Error::Shape(format!("expected {} pixels, got {}", h * w, image.len())));
    }
    let (gh, gw) = (h / p, w / p);
    let mut out = Vec::with_capacity(h * w);
    for pr in 0..gh {
        for pc in 0..gw {
            for i in 0..p {
                let row = (pr * p + i) * w + pc * p;
                out.extend_from_slice(&image[row..row + p]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(patches: &[T], h: usize, w: usize, p: usize) -> Result<Vec<T>> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!("{h}x{w} image not divisible into {p}x{p} patches")));
    }
    let n = (h / p) * (w / p);
    if patches.len() != n * p * p {
        return Err(Error::Shape(format!(
            "{} values do not form {n} patches of {p}x{p}",
            patches.len()
        )));
    }
    let gw = w / p;
    let mut out = vec![T::zero(); h * w];
    for (k, patch) in patches.chunks_exact(p * p).enumerate() {
        let (pr, pc) = (k / gw, k % gw);
        for i in 0..p {
            let row = (pr * p + i) * w + pc * p;
            out[row..row + p].copy_from_slice(&patch[i * p..(i + 1) * p]);
        }
    }
    Ok(out)
}

/// Patchifies a batch of images stored back to back.
pub fn patchify_batch<T: Scalar>(images: &[T], batch: usize, h: usize, w: usize, p: usize) -> Result<Vec<T>> {
    if images.len() != batch * h * w {
        return Err(Error::Shape(format!(
            "batch of {batch} {h}x{w} images needs {} values, got {}",
            batch * h * w,
            images.len()
        )));
    }
    let mut out = Vec::with_capacity(images.len());
    for img in images.chunks_exact(h * w) {
        out.extend(patchify(img, h, w, p)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_by_four_with_two_pixel_patches() {
        let img: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let p = patchify(&img, 4, 4, 2).unwrap();
        assert_eq!(p.len() / 4, 4);
        // pixels (0,0),(0,1),(1,0),(1,1)
        assert_eq!(&p[0..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&p[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn non_square_patch_count() {
        let img = vec![0.0f64; 24];
        assert_eq!(patchify(&img, 6, 4, 2).unwrap().len() / 4, 6);
    }

    #[test]
    fn indivisible_dimensions_are_rejected() {
        assert!(patchify(&[0.0f32; 15], 5, 3, 2).is_err());
        assert!(unpatchify(&[0.0f32; 12], 4, 4, 2).is_err());
    }

    #[test]
    fn zero_patches_give_zero_image_and_single_patch_is_reshape() {
        assert!(unpatchify(&[0.0f32; 64], 8, 8, 4).unwrap().iter().all(|&v| v == 0.0));
        let single: Vec<f32> = (0..9).map(|v| v as f32).collect();
        assert_eq!(unpatchify(&single, 3, 3, 3).unwrap(), single);
    }

    #[test]
    fn round_trip_default_geometry() {
        let img: Vec<f32> = (0..256 * 256).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
        let back = unpatchify(&patchify(&img, 256, 256, 16).unwrap(), 256, 256, 16).unwrap();
        assert_eq!(back, img);
    }

    proptest! {
        #[test]
        fn round_trip_random_eight_by_eight(values in proptest::collection::vec(-1.0f64..1.0, 64)) {
            let patches = patchify(&values, 8, 8, 4).unwrap();
            let back = unpatchify(&patches, 8, 8, 4).unwrap();
            for (a, b) in back.iter().zip(&values) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
