//! 2D batch normalization with train-mode backward.

use ndarray::{Array1, Array4, ArrayD, Axis, IxDyn};

use super::{join, Element, Param, Params};

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: ArrayD<T>,
    pub running_var: ArrayD<T>,
    pub momentum: T,
    pub eps: T,
    channels: usize,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: ArrayD::zeros(IxDyn(&[channels])),
            running_var: ArrayD::ones(IxDyn(&[channels])),
            momentum: T::from_f64(0.1),
            eps: T::from_f64(1e-5),
            channels,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Train mode normalizes with batch statistics (biased variance), caches
    /// what backward needs, and updates running statistics with the unbiased
    /// variance. Eval mode applies running statistics elementwise.
    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "batchnorm expects {} channels, got {c}", self.channels);
        if !train {
            let mut y = x.clone();
            for ci in 0..c {
                let inv = (self.running_var[ci] + self.eps).sqrt().recip();
                let mean = self.running_mean[ci];
                let g = self.gamma.value[ci];
                let b = self.beta.value[ci];
                y.index_axis_mut(Axis(1), ci)
                    .mapv_inplace(|v| (v - mean) * inv * g + b);
            }
            return y;
        }

        let m = (n * h * w) as f64;
        let mut mean = Array1::<T>::zeros(c);
        for ci in 0..c {
            let mut acc = T::zero();
            for v in x.index_axis(Axis(1), ci).iter() {
                acc = acc + *v;
            }
            mean[ci] = acc / T::from_f64(m);
        }
        let mut inv_std = Array1::<T>::zeros(c);
        let mut biased_var = Array1::<T>::zeros(c);
        for ci in 0..c {
            let mu = mean[ci];
            let mut acc = T::zero();
            for v in x.index_axis(Axis(1), ci).iter() {
                let d = *v - mu;
                acc = acc + d * d;
            }
            let var = acc / T::from_f64(m);
            biased_var[ci] = var;
            inv_std[ci] = (var + self.eps).sqrt().recip();
        }

        let mut xhat = x.clone();
        for ci in 0..c {
            let mu = mean[ci];
            let inv = inv_std[ci];
            xhat.index_axis_mut(Axis(1), ci).mapv_inplace(|v| (v - mu) * inv);
        }
        let mut y = xhat.clone();
        for ci in 0..c {
            let g = self.gamma.value[ci];
            let b = self.beta.value[ci];
            y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * g + b);
        }

        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let mom = self.momentum;
        for ci in 0..c {
            self.running_mean[ci] =
                self.running_mean[ci] * (T::one() - mom) + mean[ci] * mom;
            self.running_var[ci] = self.running_var[ci] * (T::one() - mom)
                + biased_var[ci] * T::from_f64(unbias) * mom;
        }

        self.cache = Some(Cache { xhat, inv_std });
        y
    }

    /// Train-mode backward. Accumulates gamma/beta gradients and returns the
    /// input gradient:
    /// `dx = gamma * inv_std * (dy - (sum(dy) + xhat * sum(dy*xhat)) / m)`.
    pub fn backward(&mut self, gy: &Array4<T>) -> Array4<T> {
        let Cache { xhat, inv_std } = self
            .cache
            .take()
            .expect("batchnorm backward without matching train forward");
        let (n, c, h, w) = gy.dim();
        assert_eq!(gy.dim(), xhat.dim(), "batchnorm backward shape mismatch");
        let m = T::from_f64((n * h * w) as f64);

        let mut gx = Array4::zeros(gy.dim());
        for ci in 0..c {
            let mut sum_gy = T::zero();
            let mut sum_gy_xhat = T::zero();
            for (g, xh) in gy
                .index_axis(Axis(1), ci)
                .iter()
                .zip(xhat.index_axis(Axis(1), ci).iter())
            {
                sum_gy = sum_gy + *g;
                sum_gy_xhat = sum_gy_xhat + *g * *xh;
            }
            self.beta.grad[ci] = self.beta.grad[ci] + sum_gy;
            self.gamma.grad[ci] = self.gamma.grad[ci] + sum_gy_xhat;

            let scale = self.gamma.value[ci] * inv_std[ci];
            let mean_gy = sum_gy / m;
            let mean_gy_xhat = sum_gy_xhat / m;
            let mut gx_c = gx.index_axis_mut(Axis(1), ci);
            for ((d, g), xh) in gx_c
                .iter_mut()
                .zip(gy.index_axis(Axis(1), ci).iter())
                .zip(xhat.index_axis(Axis(1), ci).iter())
            {
                *d = scale * (*g - mean_gy - *xh * mean_gy_xhat);
            }
        }
        gx
    }
}

impl<T: Element> Params<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<T>)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
