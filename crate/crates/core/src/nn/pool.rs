//! Max pooling and (adaptive) average pooling.

use ndarray::{Array2, Array4};

use super::Element;

/// Max pooling with an argmax cache for the backward pass.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Flat input index (`iy * w + ix`) of each output's maximum.
    cache: Option<(ndarray::Array4<u32>, (usize, usize))>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(padding < kernel, "pooling padding must be smaller than the kernel");
        MaxPool2d {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = self.padding;
        ((h + 2 * p - k) / self.stride + 1, (w + 2 * p - k) / self.stride + 1)
    }

    /// Padding cells never win the max: the window scan only visits valid
    /// input pixels (equivalent to -inf padding).
    pub fn forward<T: Element>(&mut self, x: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let s = self.stride;
        let p = self.padding as isize;
        let mut y = Array4::zeros((n, c, oh, ow));
        let mut arg = ndarray::Array4::<u32>::zeros((n, c, oh, ow));
        for i in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0u32;
                        for kh in 0..k {
                            let iy = (oy * s + kh) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let ix = (ox * s + kw) as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let v = x[(i, ci, iy as usize, ix as usize)];
                                if v > best {
                                    best = v;
                                    best_idx = (iy as usize * w + ix as usize) as u32;
                                }
                            }
                        }
                        y[(i, ci, oy, ox)] = best;
                        arg[(i, ci, oy, ox)] = best_idx;
                    }
                }
            }
        }
        self.cache = Some((arg, (h, w)));
        y
    }

    pub fn backward<T: Element>(&mut self, gy: &Array4<T>) -> Array4<T> {
        let (arg, (h, w)) = self
            .cache
            .take()
            .expect("maxpool backward without matching forward");
        let (n, c, oh, ow) = gy.dim();
        assert_eq!(arg.dim(), gy.dim(), "maxpool backward shape mismatch");
        let mut gx = Array4::zeros((n, c, h, w));
        for i in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let flat = arg[(i, ci, oy, ox)] as usize;
                        let (iy, ix) = (flat / w, flat % w);
                        gx[(i, ci, iy, ix)] = gx[(i, ci, iy, ix)] + gy[(i, ci, oy, ox)];
                    }
                }
            }
        }
        gx
    }
}

/// Region bounds of adaptive pooling: output cell `i` of `out` covers input
/// rows `[floor(i*in/out), ceil((i+1)*in/out))`.
fn adaptive_span(i: usize, inp: usize, out: usize) -> (usize, usize) {
    (i * inp / out, ((i + 1) * inp).div_ceil(out))
}

/// Adaptive average pooling to `(oh, ow)`; the identity when the input is
/// already that size.
pub fn adaptive_avg_pool2d<T: Element>(x: &Array4<T>, oh: usize, ow: usize) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    assert!(oh >= 1 && ow >= 1 && oh <= h && ow <= w, "adaptive pool cannot upsample");
    let mut y = Array4::zeros((n, c, oh, ow));
    for i in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let (y0, y1) = adaptive_span(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1) = adaptive_span(ox, w, ow);
                    let mut acc = T::zero();
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            acc = acc + x[(i, ci, iy, ix)];
                        }
                    }
                    y[(i, ci, oy, ox)] = acc / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
    }
    y
}

pub fn adaptive_avg_pool2d_backward<T: Element>(
    gy: &Array4<T>,
    in_h: usize,
    in_w: usize,
) -> Array4<T> {
    let (n, c, oh, ow) = gy.dim();
    let mut gx = Array4::zeros((n, c, in_h, in_w));
    for i in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let (y0, y1) = adaptive_span(oy, in_h, oh);
                for ox in 0..ow {
                    let (x0, x1) = adaptive_span(ox, in_w, ow);
                    let g = gy[(i, ci, oy, ox)] / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            gx[(i, ci, iy, ix)] = gx[(i, ci, iy, ix)] + g;
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Global average pooling `[n, c, h, w] -> [n, c]`.
pub fn global_avg_pool<T: Element>(x: &Array4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut y = Array2::zeros((n, c));
    for i in 0..n {
        for ci in 0..c {
            let mut acc = T::zero();
            for oy in 0..h {
                for ox in 0..w {
                    acc = acc + x[(i, ci, oy, ox)];
                }
            }
            y[(i, ci)] = acc * inv;
        }
    }
    y
}

pub fn global_avg_pool_backward<T: Element>(gy: &Array2<T>, h: usize, w: usize) -> Array4<T> {
    let (n, c) = gy.dim();
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut gx = Array4::zeros((n, c, h, w));
    for i in 0..n {
        for ci in 0..c {
            let g = gy[(i, ci)] * inv;
            gx.index_axis_mut(ndarray::Axis(0), i)
                .index_axis_mut(ndarray::Axis(0), ci)
                .fill(g);
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maxpool_3x3_s1_p1_preserves_shape_and_takes_window_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let x = Array4::from_shape_fn((2, 3, 6, 5), |_| rng.random_range(-1.0..1.0f64));
        let mut pool = MaxPool2d::new(3, 1, 1);
        let y = pool.forward(&x);
        assert_eq!(y.dim(), x.dim());
        // Oracle: direct window max, padding excluded.
        for i in 0..2 {
            for c in 0..3 {
                for oy in 0..6i64 {
                    for ox in 0..5i64 {
                        let mut best = f64::NEG_INFINITY;
                        for dy in -1..=1i64 {
                            for dx in -1..=1i64 {
                                let (iy, ix) = (oy + dy, ox + dx);
                                if iy >= 0 && iy < 6 && ix >= 0 && ix < 5 {
                                    best = best.max(x[(i, c, iy as usize, ix as usize)]);
                                }
                            }
                        }
                        assert_eq!(y[(i, c, oy as usize, ox as usize)], best);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_backward_routes_gradient_to_argmax() {
        let mut x = Array4::zeros((1, 1, 3, 3));
        x[(0, 0, 1, 1)] = 5.0f64; // global max wins every window containing it
        let mut pool = MaxPool2d::new(3, 1, 1);
        let _ = pool.forward(&x);
        let gy = Array4::from_elem((1, 1, 3, 3), 1.0);
        let gx = pool.backward(&gy);
        // All 9 windows contain the centre: it collects the full gradient.
        assert_eq!(gx[(0, 0, 1, 1)], 9.0);
        assert_eq!(gx.sum(), 9.0);
    }

    #[test]
    fn adaptive_pool_is_identity_at_matching_size_and_averages_regions() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let x = Array4::from_shape_fn((1, 2, 4, 4), |_| rng.random_range(-1.0..1.0f64));
        let same = adaptive_avg_pool2d(&x, 4, 4);
        assert_eq!(same, x);
        let y = adaptive_avg_pool2d(&x, 2, 2);
        let mut expect = 0.0;
        for iy in 0..2 {
            for ix in 0..2 {
                expect += x[(0, 0, iy, ix)];
            }
        }
        assert!((y[(0, 0, 0, 0)] - expect / 4.0).abs() < 1e-12);
        // Uneven split: 5 -> 2 gives regions [0,3) and [2,5).
        let x5 = Array4::from_shape_fn((1, 1, 1, 5), |(_, _, _, i)| i as f64);
        let y5 = adaptive_avg_pool2d(&x5, 1, 2);
        assert!((y5[(0, 0, 0, 0)] - 1.0).abs() < 1e-12); // mean(0,1,2)
        assert!((y5[(0, 0, 0, 1)] - 3.0).abs() < 1e-12); // mean(2,3,4)
    }

    #[test]
    fn avg_pool_backwards_are_linear_adjoints() {
        // <pool(x), g> == <x, pool_backward(g)> for linear ops.
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let x = Array4::from_shape_fn((2, 3, 5, 7), |_| rng.random_range(-1.0..1.0f64));
        let g = Array4::from_shape_fn((2, 3, 2, 3), |_| rng.random_range(-1.0..1.0f64));
        let lhs = (&adaptive_avg_pool2d(&x, 2, 3) * &g).sum();
        let rhs = (&x * &adaptive_avg_pool2d_backward(&g, 5, 7)).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let g2 = ndarray::Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0f64));
        let lhs = (&global_avg_pool(&x) * &g2).sum();
        let rhs = (&x * &global_avg_pool_backward(&g2, 5, 7)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
