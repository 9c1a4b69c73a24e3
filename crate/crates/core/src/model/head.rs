//! Fusion head: concatenated branch features to a sigmoid-squashed 2D
//! coordinate in the unit square.

use ndarray::{concatenate, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::nn::{elu, elu_backward, join, sigmoid, sigmoid_backward, Element, Linear, Param,
    Params};

struct HeadCache<T> {
    /// Concatenated input followed by each hidden ELU output.
    hs: Vec<Array2<T>>,
    y: Array2<T>,
}

/// MLP over the concatenated branch features; hidden layers use ELU and the
/// two outputs pass through a sigmoid.
pub struct FusionHead<T: Element> {
    pub hidden: Vec<Linear<T>>,
    pub out: Linear<T>,
    widths: Vec<usize>,
    cache: Option<HeadCache<T>>,
}

impl<T: Element> FusionHead<T> {
    /// `widths` are the per-branch feature lengths, in concatenation order.
    pub fn new(widths: Vec<usize>, hidden_sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut in_f: usize = widths.iter().sum();
        assert!(in_f > 0, "head needs at least one input feature");
        let mut hidden = Vec::with_capacity(hidden_sizes.len());
        for &h in hidden_sizes {
            hidden.push(Linear::new(in_f, h, rng));
            in_f = h;
        }
        FusionHead {
            hidden,
            out: Linear::new(in_f, 2, rng),
            widths,
            cache: None,
        }
    }

    /// `feats` must match the widths given at construction.
    pub fn forward(&mut self, feats: &[Array2<T>], train: bool) -> Array2<T> {
        assert_eq!(feats.len(), self.widths.len());
        for (f, &w) in feats.iter().zip(&self.widths) {
            assert_eq!(f.dim().1, w, "branch feature width mismatch");
        }
        let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
        let x = concatenate(Axis(1), &views).expect("feature batch sizes must match");
        let mut hs = vec![x];
        for fc in &mut self.hidden {
            let h = elu(&fc.forward(hs.last().unwrap()));
            hs.push(h);
        }
        let y = sigmoid(&self.out.forward(hs.last().unwrap()));
        if train {
            self.cache = Some(HeadCache { hs, y: y.clone() });
        }
        y
    }

    /// Returns one gradient per branch feature, in concatenation order.
    pub fn backward(&mut self, gy: &Array2<T>) -> Vec<Array2<T>> {
        let c = self.cache.take().expect("forward(train) before backward");
        let mut g = sigmoid_backward(&c.y, gy);
        g = self.out.backward(c.hs.last().unwrap(), &g);
        for (k, fc) in self.hidden.iter_mut().enumerate().rev() {
            g = elu_backward(&c.hs[k + 1], &g);
            g = fc.backward(&c.hs[k], &g);
        }
        let mut grads = Vec::with_capacity(self.widths.len());
        let mut start = 0;
        for &w in &self.widths {
            grads.push(g.slice(ndarray::s![.., start..start + w]).to_owned());
            start += w;
        }
        grads
    }
}

impl<T: Element> Params<T> for FusionHead<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (k, fc) in self.hidden.iter_mut().enumerate() {
            fc.visit_params(&join(prefix, &format!("fc{k}")), f);
        }
        self.out.visit_params(&join(prefix, "out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;
    use rand::Rng;

    #[test]
    fn outputs_live_in_the_unit_square() {
        let mut rng = rng_for(19, "test", 0);
        let mut head = FusionHead::<f32>::new(vec![8, 4], &[16], &mut rng);
        let a = Array2::from_shape_simple_fn((5, 8), || rng.random_range(-10.0f32..10.0));
        let b = Array2::from_shape_simple_fn((5, 4), || rng.random_range(-10.0f32..10.0));
        let y = head.forward(&[a, b], false);
        assert_eq!(y.dim(), (5, 2));
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn split_gradients_match_finite_differences() {
        let mut rng = rng_for(19, "test", 1);
        let mut head = FusionHead::<f64>::new(vec![3, 5], &[7, 6], &mut rng);
        let a = Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_simple_fn((2, 5), || rng.random_range(-1.0..1.0));
        let gy = Array2::from_shape_simple_fn((2, 2), || rng.random_range(-1.0..1.0));

        head.forward(&[a.clone(), b.clone()], true);
        let grads = head.backward(&gy);
        assert_eq!(grads.len(), 2);
        assert_eq!(grads[0].dim(), (2, 3));
        assert_eq!(grads[1].dim(), (2, 5));

        let h = 1e-6;
        let loss = |head: &mut FusionHead<f64>, a: &Array2<f64>, b: &Array2<f64>| -> f64 {
            let y = head.forward(&[a.clone(), b.clone()], true);
            head.cache = None;
            y.iter().zip(gy.iter()).map(|(p, q)| p * q).sum()
        };
        for idx in [(0, 0), (1, 2)] {
            let mut ap = a.clone();
            ap[idx] += h;
            let mut am = a.clone();
            am[idx] -= h;
            let num = (loss(&mut head, &ap, &b) - loss(&mut head, &am, &b)) / (2.0 * h);
            assert!((num - grads[0][idx]).abs() < 1e-6 * (1.0 + num.abs()));
        }
        for idx in [(0, 4), (1, 1)] {
            let mut bp = b.clone();
            bp[idx] += h;
            let mut bm = b.clone();
            bm[idx] -= h;
            let num = (loss(&mut head, &a, &bp) - loss(&mut head, &a, &bm)) / (2.0 * h);
            assert!((num - grads[1][idx]).abs() < 1e-6 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn no_hidden_layers_is_a_single_projection() {
        let mut rng = rng_for(19, "test", 2);
        let mut head = FusionHead::<f32>::new(vec![4], &[], &mut rng);
        let a = Array2::<f32>::zeros((1, 4));
        assert_eq!(head.forward(&[a], false).dim(), (1, 2));
    }
}
