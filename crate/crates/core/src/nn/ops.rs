//! Elementwise activations.
//!
//! Backward passes take the forward *output*, which both ELU and the
//! logistic sigmoid fully determine the derivative from; composites already
//! hold those outputs for later layers, so nothing is cached here.

use ndarray::{Array, Dimension};

use super::Element;

/// ELU with alpha = 1: `x` for `x > 0`, else `exp(x) - 1`.
pub fn elu<T: Element, D: Dimension>(x: &Array<T, D>) -> Array<T, D> {
    x.mapv(|v| if v > T::zero() { v } else { v.exp() - T::one() })
}

/// `d elu/dx` expressed through the output `y`: `1` if `y > 0`, else `y + 1`.
pub fn elu_backward<T: Element, D: Dimension>(y: &Array<T, D>, gy: &Array<T, D>) -> Array<T, D> {
    let mut gx = gy.clone();
    gx.zip_mut_with(y, |g, &yv| {
        if yv <= T::zero() {
            *g = *g * (yv + T::one());
        }
    });
    gx
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<T: Element, D: Dimension>(x: &Array<T, D>) -> Array<T, D> {
    x.mapv(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// `d sigmoid/dx = y * (1 - y)`.
pub fn sigmoid_backward<T: Element, D: Dimension>(
    y: &Array<T, D>,
    gy: &Array<T, D>,
) -> Array<T, D> {
    let mut gx = gy.clone();
    gx.zip_mut_with(y, |g, &yv| *g = *g * yv * (T::one() - yv));
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn elu_values_and_continuity() {
        let x = Array1::from(vec![-2.0f64, -1e-12, 0.0, 1e-12, 3.0]);
        let y = elu(&x);
        assert!((y[0] - ((-2.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!(y[1].abs() < 1e-11);
        assert_eq!(y[2], 0.0);
        assert_eq!(y[4], 3.0);
    }

    #[test]
    fn elu_backward_matches_finite_differences() {
        let x = Array1::from(vec![-1.5f64, -0.2, 0.3, 2.0]);
        let y = elu(&x);
        let gy = Array1::from(vec![1.0f64; 4]);
        let gx = elu_backward(&y, &gy);
        let eps = 1e-7;
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += eps;
            let up = elu(&xp)[i];
            xp[i] -= 2.0 * eps;
            let down = elu(&xp)[i];
            let num = (up - down) / (2.0 * eps);
            assert!((gx[i] - num).abs() < 1e-7, "i={i}: {} vs {num}", gx[i]);
        }
    }

    #[test]
    fn sigmoid_is_stable_and_bounded() {
        let x = Array1::from(vec![-500.0f64, -1.0, 0.0, 1.0, 500.0]);
        let y = sigmoid(&x);
        assert!(y[0] >= 0.0 && y[0] < 1e-100);
        assert_eq!(y[2], 0.5);
        assert!(y[4] <= 1.0 && y[4] > 1.0 - 1e-15);
        for v in y.iter() {
            assert!(v.is_finite() && *v >= 0.0 && *v <= 1.0);
        }
    }

    #[test]
    fn sigmoid_backward_matches_finite_differences() {
        let x = Array1::from(vec![-2.0f64, 0.0, 0.7]);
        let y = sigmoid(&x);
        let gy = Array1::from(vec![1.0f64; 3]);
        let gx = sigmoid_backward(&y, &gy);
        let eps = 1e-7;
        for i in 0..3 {
            let mut xp = x.clone();
            xp[i] += eps;
            let up = sigmoid(&xp)[i];
            xp[i] -= 2.0 * eps;
            let down = sigmoid(&xp)[i];
            let num = (up - down) / (2.0 * eps);
            assert!((gx[i] - num).abs() < 1e-8);
        }
    }
}
