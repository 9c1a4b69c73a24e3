//! Weight initializers.
//!
//! Draws are always made in `f64` and cast afterwards, so a given seed
//! produces the same weights regardless of the training dtype.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Element;

/// Kaiming normal, fan-out mode, for a `[out_c, in_c, k, k]` conv weight:
/// `std = sqrt(2 / (out_c * k * k))`. This is the standard ResNet conv
/// initialization for ELU/ReLU-family activations.
pub fn kaiming_conv<T: Element>(
    rng: &mut ChaCha8Rng,
    out_c: usize,
    in_c: usize,
    k: usize,
) -> ArrayD<T> {
    let fan_out = (out_c * k * k) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_out).sqrt()).unwrap();
    let mut w = ArrayD::zeros(IxDyn(&[out_c, in_c, k, k]));
    for v in w.iter_mut() {
        *v = T::from_f64(normal.sample(rng));
    }
    w
}

/// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for a `[out, in]` linear
/// weight and its bias.
pub fn linear_uniform<T: Element>(
    rng: &mut ChaCha8Rng,
    out_f: usize,
    in_f: usize,
) -> (ArrayD<T>, ArrayD<T>) {
    let bound = 1.0 / (in_f as f64).sqrt();
    let mut w = ArrayD::zeros(IxDyn(&[out_f, in_f]));
    for v in w.iter_mut() {
        *v = T::from_f64(rng.random_range(-bound..bound));
    }
    let mut b = ArrayD::zeros(IxDyn(&[out_f]));
    for v in b.iter_mut() {
        *v = T::from_f64(rng.random_range(-bound..bound));
    }
    (w, b)
}
