//! Fully connected layer.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::init::linear_uniform;
use super::{gemm_into, join, Element, Param, Params};

#[derive(Debug, Clone)]
pub struct Linear<T> {
    /// `[out, in]`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_f: usize,
    pub out_f: usize,
}

impl<T: Element> Linear<T> {
    pub fn new(in_f: usize, out_f: usize, rng: &mut ChaCha8Rng) -> Self {
        let (w, b) = linear_uniform(rng, out_f, in_f);
        Linear {
            weight: Param::new(w),
            bias: Param::new(b),
            in_f,
            out_f,
        }
    }

    /// `y = x @ W^T + b` for `x: [n, in]`.
    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let (n, f) = x.dim();
        assert_eq!(f, self.in_f, "linear expects {} inputs, got {f}", self.in_f);
        let w2d = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_f, self.in_f))
            .unwrap();
        let mut y = Array2::zeros((n, self.out_f));
        gemm_into(T::one(), &x.view(), &w2d.t(), T::zero(), &mut y.view_mut());
        for mut row in y.rows_mut() {
            for (v, b) in row.iter_mut().zip(self.bias.value.iter()) {
                *v = *v + *b;
            }
        }
        y
    }

    /// Accumulates weight/bias gradients, returns the input gradient.
    pub fn backward(&mut self, x: &Array2<T>, gy: &Array2<T>) -> Array2<T> {
        let (n, _) = x.dim();
        assert_eq!(gy.dim(), (n, self.out_f), "linear backward shape mismatch");
        {
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((self.out_f, self.in_f))
                .unwrap();
            gemm_into(T::one(), &gy.t(), &x.view(), T::one(), &mut gw);
        }
        for gy_row in gy.rows() {
            for (gb, g) in self.bias.grad.iter_mut().zip(gy_row.iter()) {
                *gb = *gb + *g;
            }
        }
        let w2d = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_f, self.in_f))
            .unwrap();
        let mut gx = Array2::zeros((n, self.in_f));
        gemm_into(T::one(), &gy.view(), &w2d, T::zero(), &mut gx.view_mut());
        gx
    }
}

impl<T: Element> Params<T> for Linear<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let lin: Linear<f64> = Linear::new(4, 3, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let y = lin.forward(&x);
        for i in 0..5 {
            for o in 0..3 {
                let mut acc = lin.bias.value[o];
                for k in 0..4 {
                    acc += x[(i, k)] * lin.weight.value[[o, k]];
                }
                assert!((y[(i, o)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut lin: Linear<f64> = Linear::new(3, 2, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let lw = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        lin.zero_grads();
        let gx = lin.backward(&x, &lw);

        let loss = |l: &Linear<f64>, x: &Array2<f64>| (l.forward(x) * &lw).sum();
        let eps = 1e-6;
        for idx in [(0, 0), (3, 2), (1, 1)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let up = loss(&lin, &xp);
            xp[idx] -= 2.0 * eps;
            let down = loss(&lin, &xp);
            let num = (up - down) / (2.0 * eps);
            assert!((gx[idx] - num).abs() / num.abs().max(1e-8) < 1e-6);
        }
        for widx in [[0usize, 0], [1, 2]] {
            let orig = lin.weight.value[widx.as_slice()];
            lin.weight.value[widx.as_slice()] = orig + eps;
            let up = loss(&lin, &x);
            lin.weight.value[widx.as_slice()] = orig - eps;
            let down = loss(&lin, &x);
            lin.weight.value[widx.as_slice()] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!((lin.weight.grad[widx.as_slice()] - num).abs() / num.abs().max(1e-8) < 1e-6);
        }
        let orig = lin.bias.value[1];
        lin.bias.value[1] = orig + eps;
        let up = loss(&lin, &x);
        lin.bias.value[1] = orig - eps;
        let down = loss(&lin, &x);
        lin.bias.value[1] = orig;
        let num = (up - down) / (2.0 * eps);
        assert!((lin.bias.grad[1] - num).abs() / num.abs().max(1e-8) < 1e-6);
    }
}
