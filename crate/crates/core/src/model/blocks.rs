//! Residual bottleneck blocks and the conv + batch-norm + ELU unit.

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;

use crate::nn::{elu, elu_backward, join, BatchNorm2d, Conv2d, Element, Param, Params};

/// Convolution (no bias) followed by batch normalization and ELU.
#[derive(Debug)]
pub struct ConvBnElu<T: Element> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Element> ConvBnElu<T> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ConvBnElu {
            conv: Conv2d::new(in_c, out_c, kernel, stride, padding, false, rng),
            bn: BatchNorm2d::new(out_c),
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        elu(&self.bn.forward(&self.conv.forward(x), train))
    }

    /// `x` is the forward input, `y` the forward output.
    pub fn backward(&mut self, x: &Array4<T>, y: &Array4<T>, gy: &Array4<T>) -> Array4<T> {
        let g = elu_backward(y, gy);
        let g = self.bn.backward(&g);
        self.conv.backward(x, &g)
    }
}

impl<T: Element> Params<T> for ConvBnElu<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }
}

/// Standard bottleneck: 1x1 down to C/4, 3x3 at C/4, 1x1 back to C, with an
/// identity skip. ELU after the first two norms and after the residual sum.
#[derive(Debug)]
pub struct StandardBottleneck<T: Element> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub conv3: Conv2d<T>,
    pub bn3: BatchNorm2d<T>,
    cache: Option<(Array4<T>, Array4<T>)>,
}

impl<T: Element> StandardBottleneck<T> {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mid = channels / 4;
        StandardBottleneck {
            conv1: Conv2d::new(channels, mid, 1, 1, 0, false, rng),
            bn1: BatchNorm2d::new(mid),
            conv2: Conv2d::new(mid, mid, 3, 1, 1, false, rng),
            bn2: BatchNorm2d::new(mid),
            conv3: Conv2d::new(mid, channels, 1, 1, 0, false, rng),
            bn3: BatchNorm2d::new(channels),
            cache: None,
        }
    }

    /// Zero the final norm's scale so the block starts as an identity.
    pub fn zero_residual_scale(&mut self) {
        self.bn3.gamma.value.fill(T::zero());
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let a1 = elu(&self.bn1.forward(&self.conv1.forward(x), train));
        let a2 = elu(&self.bn2.forward(&self.conv2.forward(&a1), train));
        let mut out = self.bn3.forward(&self.conv3.forward(&a2), train);
        out += x;
        if train {
            self.cache = Some((a1, a2));
        }
        elu(&out)
    }

    pub fn backward(&mut self, x: &Array4<T>, y: &Array4<T>, gy: &Array4<T>) -> Array4<T> {
        let (a1, a2) = self.cache.take().expect("forward(train) before backward");
        let g_sum = elu_backward(y, gy);
        let g = self.bn3.backward(&g_sum);
        let g = self.conv3.backward(&a2, &g);
        let g = elu_backward(&a2, &g);
        let g = self.bn2.backward(&g);
        let g = self.conv2.backward(&a1, &g);
        let g = elu_backward(&a1, &g);
        let g = self.bn1.backward(&g);
        let mut gx = self.conv1.backward(x, &g);
        gx += &g_sum;
        gx
    }
}

impl<T: Element> Params<T> for StandardBottleneck<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        self.conv3.visit_params(&join(prefix, "conv3"), f);
        self.bn3.visit_params(&join(prefix, "bn3"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
        self.bn3.visit_buffers(&join(prefix, "bn3"), f);
    }
}

/// Expanded bottleneck: 1x1 down to C/2, 3x3 at C/2 (stride 1 or 2), 1x1 up
/// to `expansion * C`, with a projection skip (1x1 conv at the same stride
/// plus batch norm). ELU after the first two norms and after the sum.
#[derive(Debug)]
pub struct ExpandedBottleneck<T: Element> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub conv3: Conv2d<T>,
    pub bn3: BatchNorm2d<T>,
    pub conv_skip: Conv2d<T>,
    pub bn_skip: BatchNorm2d<T>,
    cache: Option<(Array4<T>, Array4<T>)>,
}

impl<T: Element> ExpandedBottleneck<T> {
    pub fn new(in_c: usize, expansion: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let mid = in_c / 2;
        let out_c = in_c * expansion;
        ExpandedBottleneck {
            conv1: Conv2d::new(in_c, mid, 1, 1, 0, false, rng),
            bn1: BatchNorm2d::new(mid),
            conv2: Conv2d::new(mid, mid, 3, stride, 1, false, rng),
            bn2: BatchNorm2d::new(mid),
            conv3: Conv2d::new(mid, out_c, 1, 1, 0, false, rng),
            bn3: BatchNorm2d::new(out_c),
            conv_skip: Conv2d::new(in_c, out_c, 1, stride, 0, false, rng),
            bn_skip: BatchNorm2d::new(out_c),
            cache: None,
        }
    }

    /// Zero the main path's final norm scale so the block starts as the
    /// projected skip alone.
    pub fn zero_residual_scale(&mut self) {
        self.bn3.gamma.value.fill(T::zero());
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let a1 = elu(&self.bn1.forward(&self.conv1.forward(x), train));
        let a2 = elu(&self.bn2.forward(&self.conv2.forward(&a1), train));
        let mut out = self.bn3.forward(&self.conv3.forward(&a2), train);
        out += &self.bn_skip.forward(&self.conv_skip.forward(x), train);
        if train {
            self.cache = Some((a1, a2));
        }
        elu(&out)
    }

    pub fn backward(&mut self, x: &Array4<T>, y: &Array4<T>, gy: &Array4<T>) -> Array4<T> {
        let (a1, a2) = self.cache.take().expect("forward(train) before backward");
        let g_sum = elu_backward(y, gy);
        let g_skip = self.bn_skip.backward(&g_sum);
        let mut gx = self.conv_skip.backward(x, &g_skip);
        let g = self.bn3.backward(&g_sum);
        let g = self.conv3.backward(&a2, &g);
        let g = elu_backward(&a2, &g);
        let g = self.bn2.backward(&g);
        let g = self.conv2.backward(&a1, &g);
        let g = elu_backward(&a1, &g);
        let g = self.bn1.backward(&g);
        gx += &self.conv1.backward(x, &g);
        gx
    }
}

impl<T: Element> Params<T> for ExpandedBottleneck<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        self.conv3.visit_params(&join(prefix, "conv3"), f);
        self.bn3.visit_params(&join(prefix, "bn3"), f);
        self.conv_skip.visit_params(&join(prefix, "conv_skip"), f);
        self.bn_skip.visit_params(&join(prefix, "bn_skip"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
        self.bn3.visit_buffers(&join(prefix, "bn3"), f);
        self.bn_skip.visit_buffers(&join(prefix, "bn_skip"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;
    use ndarray::Array4;
    use rand::Rng;

    fn random_input(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zeroed_standard_bottleneck_is_elu_of_input() {
        // With bn3's scale at zero the residual path contributes nothing,
        // so the block reduces to ELU(x) exactly.
        let mut rng = rng_for(7, "test", 0);
        let mut blk = StandardBottleneck::<f64>::new(8, &mut rng);
        blk.zero_residual_scale();
        let x = random_input(&mut rng, (2, 8, 6, 6));
        let y = blk.forward(&x, true);
        let want = elu(&x);
        assert!(
            y.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-12),
            "zeroed block must be ELU(identity)"
        );
    }

    #[test]
    fn standard_bottleneck_preserves_shape() {
        let mut rng = rng_for(7, "test", 1);
        let mut blk = StandardBottleneck::<f32>::new(16, &mut rng);
        let x = Array4::<f32>::zeros((2, 16, 10, 12));
        assert_eq!(blk.forward(&x, false).dim(), (2, 16, 10, 12));
    }

    #[test]
    fn expanded_bottleneck_shapes() {
        let mut rng = rng_for(7, "test", 2);
        let mut blk = ExpandedBottleneck::<f32>::new(8, 4, 2, &mut rng);
        let x = Array4::<f32>::zeros((2, 8, 16, 16));
        assert_eq!(blk.forward(&x, false).dim(), (2, 32, 8, 8));

        let mut blk1 = ExpandedBottleneck::<f32>::new(8, 2, 1, &mut rng);
        assert_eq!(blk1.forward(&x, false).dim(), (2, 16, 16, 16));
    }

    #[test]
    fn bottleneck_gradients_match_finite_differences() {
        let mut rng = rng_for(7, "test", 3);
        let mut blk = StandardBottleneck::<f64>::new(4, &mut rng);
        let x = random_input(&mut rng, (2, 4, 5, 5));
        let gy = random_input(&mut rng, (2, 4, 5, 5));

        let y = blk.forward(&x, true);
        let gx = blk.backward(&x, &y, &gy);

        // Check a few input coordinates by central differences. Each probe
        // reruns forward in train mode; caches are overwritten, which is
        // fine because we only need the output.
        let h = 1e-6;
        for &idx in &[(0, 0, 0, 0), (1, 2, 3, 4), (0, 3, 4, 1)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let yp = blk.forward(&xp, true);
            let ym = blk.forward(&xm, true);
            let num: f64 = (&yp - &ym)
                .iter()
                .zip(gy.iter())
                .map(|(d, g)| d * g / (2.0 * h))
                .sum();
            let got = gx[idx];
            assert!(
                (num - got).abs() < 1e-4 * (1.0 + num.abs()),
                "dx{idx:?}: numeric {num}, analytic {got}"
            );
        }
    }

    #[test]
    fn expanded_bottleneck_gradcheck() {
        let mut rng = rng_for(7, "test", 4);
        let mut blk = ExpandedBottleneck::<f64>::new(4, 2, 2, &mut rng);
        let x = random_input(&mut rng, (2, 4, 6, 6));
        let gy = random_input(&mut rng, (2, 8, 3, 3));

        let y = blk.forward(&x, true);
        let gx = blk.backward(&x, &y, &gy);

        let h = 1e-6;
        for &idx in &[(0, 0, 0, 0), (1, 3, 5, 2), (0, 1, 2, 4)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let yp = blk.forward(&xp, true);
            let ym = blk.forward(&xm, true);
            let num: f64 = (&yp - &ym)
                .iter()
                .zip(gy.iter())
                .map(|(d, g)| d * g / (2.0 * h))
                .sum();
            let got = gx[idx];
            assert!(
                (num - got).abs() < 1e-4 * (1.0 + num.abs()),
                "dx{idx:?}: numeric {num}, analytic {got}"
            );
        }
    }

    #[test]
    fn param_names_are_prefixed() {
        let mut rng = rng_for(7, "test", 5);
        let mut blk = ExpandedBottleneck::<f32>::new(4, 2, 2, &mut rng);
        let mut names = Vec::new();
        blk.visit_params("m1.b0", &mut |name, _| names.push(name.to_string()));
        assert!(names.contains(&"m1.b0.conv1.weight".to_string()));
        assert!(names.contains(&"m1.b0.conv_skip.weight".to_string()));
        assert!(names.contains(&"m1.b0.bn_skip.gamma".to_string()));
        // Convs feeding batch norm carry no bias.
        assert!(!names.iter().any(|n| n.ends_with("conv1.bias")));
    }
}
