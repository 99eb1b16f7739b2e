//! Pointwise nonlinearities and their derivatives.

use crate::scalar::{lit, Scalar};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh form.
pub fn gelu<T: Scalar>(x: &[T]) -> Vec<T> {
    let c = lit::<T>(SQRT_2_OVER_PI);
    let k = lit::<T>(GELU_CUBIC);
    let half = lit::<T>(0.5);
    x.iter()
        .map(|&v| half * v * (T::one() + (c * (v + k * v * v * v)).tanh()))
        .collect()
}

/// `dy * gelu'(x)`.
pub fn gelu_backward<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    let c = lit::<T>(SQRT_2_OVER_PI);
    let k = lit::<T>(GELU_CUBIC);
    let k3 = lit::<T>(3.0 * GELU_CUBIC);
    let half = lit::<T>(0.5);
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let t = (c * (v + k * v * v * v)).tanh();
            let dt = c * (T::one() + k3 * v * v);
            d * (half * (T::one() + t) + half * v * (T::one() - t * t) * dt)
        })
        .collect()
}

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Gradient through ReLU given the layer's output.
pub fn relu_backward<T: Scalar>(y: &[T], dy: &[T]) -> Vec<T> {
    y.iter()
        .zip(dy)
        .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
        .collect()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}
