//! Nearest-neighbour 2x upsampling.

use ndarray::Array4;

use super::Element;

/// Each input pixel becomes a 2x2 block.
pub fn upsample_nearest_2x<T: Element>(x: &Array4<T>) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let mut y = Array4::zeros((n, c, 2 * h, 2 * w));
    for i in 0..n {
        for ci in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[(i, ci, iy, ix)];
                    y[(i, ci, 2 * iy, 2 * ix)] = v;
                    y[(i, ci, 2 * iy, 2 * ix + 1)] = v;
                    y[(i, ci, 2 * iy + 1, 2 * ix)] = v;
                    y[(i, ci, 2 * iy + 1, 2 * ix + 1)] = v;
                }
            }
        }
    }
    y
}

/// Adjoint of [`upsample_nearest_2x`]: sums each 2x2 block.
pub fn upsample_nearest_2x_backward<T: Element>(gy: &Array4<T>) -> Array4<T> {
    let (n, c, oh, ow) = gy.dim();
    assert!(oh % 2 == 0 && ow % 2 == 0, "upsample backward needs even dims");
    let (h, w) = (oh / 2, ow / 2);
    let mut gx = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for ci in 0..c {
            for iy in 0..h {
                for ix in 0..w {
                    gx[(i, ci, iy, ix)] = gy[(i, ci, 2 * iy, 2 * ix)]
                        + gy[(i, ci, 2 * iy, 2 * ix + 1)]
                        + gy[(i, ci, 2 * iy + 1, 2 * ix)]
                        + gy[(i, ci, 2 * iy + 1, 2 * ix + 1)];
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn upsample_replicates_pixels() {
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, y, xx)| (y * 2 + xx) as f64);
        let y = upsample_nearest_2x(&x);
        assert_eq!(y.dim(), (1, 1, 4, 4));
        for iy in 0..4 {
            for ix in 0..4 {
                assert_eq!(y[(0, 0, iy, ix)], x[(0, 0, iy / 2, ix / 2)]);
            }
        }
    }

    #[test]
    fn backward_is_the_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let x = Array4::from_shape_fn((2, 2, 3, 4), |_| rng.random_range(-1.0..1.0f64));
        let g = Array4::from_shape_fn((2, 2, 6, 8), |_| rng.random_range(-1.0..1.0f64));
        let lhs = (&upsample_nearest_2x(&x) * &g).sum();
        let rhs = (&x * &upsample_nearest_2x_backward(&g)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
