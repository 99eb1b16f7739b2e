//! Masked L1 reconstruction loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{count, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossReduction {
    /// Literal sum over batch and pixels of `M * |x - x_bar|`.
    #[serde(rename = "sum")]
    Sum,
    /// The sum divided by the number of masked pixels.
    #[serde(rename = "mean-masked")]
    MeanMasked,
}

impl FromStr for LossReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(LossReduction::Sum),
            "mean-masked" => Ok(LossReduction::MeanMasked),
            other => Err(Error::Config(format!("unknown loss_reduction `{other}`"))),
        }
    }
}

impl fmt::Display for LossReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossReduction::Sum => "sum",
            LossReduction::MeanMasked => "mean-masked",
        })
    }
}

fn check<T: Scalar>(x: &[T], x_bar: &[T], mask: &[T]) -> Result<usize> {
    if x.len() != x_bar.len() || x.len() != mask.len() {
        return Err(Error::Shape(format!(
            "loss operands have {}, {} and {} elements",
            x.len(),
            x_bar.len(),
            mask.len()
        )));
    }
    let mut masked = 0;
    for &m in mask {
        if m == T::one() {
            masked += 1;
        } else if m != T::zero() {
            return Err(Error::Shape(format!("mask value {m} is not binary")));
        }
    }
    Ok(masked)
}

/// `sum M * |x - x_bar|`, optionally divided by `sum M`. An empty mask gives 0.
pub fn masked_l1_loss<T: Scalar>(x: &[T], x_bar: &[T], mask: &[T], reduction: LossReduction) -> Result<T> {
    let masked = check(x, x_bar, mask)?;
    let total = x
        .iter()
        .zip(x_bar)
        .zip(mask)
        .filter(|(_, &m)| m == T::one())
        .fold(T::zero(), |acc, ((&a, &b), _)| acc + (a - b).abs());
    Ok(match reduction {
        LossReduction::Sum => total,
        LossReduction::MeanMasked if masked == 0 => T::zero(),
        LossReduction::MeanMasked => total / count(masked),
    })
}

/// Gradient of [`masked_l1_loss`] w.r.t. `x_bar` (subgradient 0 at the kink).
pub fn masked_l1_grad<T: Scalar>(x: &[T], x_bar: &[T], mask: &[T], reduction: LossReduction) -> Result<Vec<T>> {
    let masked = check(x, x_bar, mask)?;
    let scale = match reduction {
        LossReduction::Sum => T::one(),
        LossReduction::MeanMasked if masked == 0 => T::zero(),
        LossReduction::MeanMasked => T::one() / count(masked),
    };
    Ok(x
        .iter()
        .zip(x_bar)
        .zip(mask)
        .map(|((&a, &b), &m)| {
            if m != T::one() || a == b {
                T::zero()
            } else if b > a {
                scale
            } else {
                -scale
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_two_by_two() {
        let x = [0.1f64, 0.2, 0.3, 0.4];
        let xb = [0.0f64; 4];
        let m = [1.0f64, 0.0, 0.0, 1.0];
        let s = masked_l1_loss(&x, &xb, &m, LossReduction::Sum).unwrap();
        let mm = masked_l1_loss(&x, &xb, &m, LossReduction::MeanMasked).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
        assert!((mm - 0.25).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_and_perfect_reconstruction_are_zero() {
        let x = [0.3f32, 0.9];
        assert_eq!(masked_l1_loss(&x, &[0.0, 0.0], &[0.0, 0.0], LossReduction::MeanMasked).unwrap(), 0.0);
        assert_eq!(masked_l1_loss(&x, &x, &[1.0, 1.0], LossReduction::Sum).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_shapes_and_non_binary_masks() {
        assert!(masked_l1_loss(&[0.0f32], &[0.0, 1.0], &[1.0], LossReduction::Sum).is_err());
        assert!(masked_l1_loss(&[0.0f32], &[1.0], &[0.5], LossReduction::Sum).is_err());
    }

    #[test]
    fn gradient_signs() {
        let g = masked_l1_grad(&[0.5f64, 0.5, 0.5], &[0.7, 0.1, 0.9], &[1.0, 1.0, 0.0], LossReduction::MeanMasked).unwrap();
        assert_eq!(g, vec![0.5, -0.5, 0.0]);
    }
}
