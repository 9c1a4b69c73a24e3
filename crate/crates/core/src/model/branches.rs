//! Depth-map and probe-axis feature branches.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use super::blocks::ConvBnElu;
use super::config::{AXIS_FEATURES, BRANCH_MLP_HIDDEN, DEPTH_CHANNELS, DEPTH_FEATURES};
use crate::nn::{elu, elu_backward, global_avg_pool, global_avg_pool_backward, join, Element,
    Linear, Param, Params};

struct DepthCache<T> {
    ys: Vec<Array4<T>>,
    feat: Array2<T>,
    h1: Array2<T>,
    hw: (usize, usize),
}

/// Depth branch: four 3x3 stride-2 conv+norm+ELU layers over the single
/// depth channel, global average pooling, then a two-layer MLP down to the
/// branch feature width.
pub struct DepthBranch<T: Element> {
    pub convs: Vec<ConvBnElu<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    cache: Option<DepthCache<T>>,
}

impl<T: Element> DepthBranch<T> {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::with_capacity(DEPTH_CHANNELS.len());
        let mut in_c = 1;
        for &out_c in &DEPTH_CHANNELS {
            convs.push(ConvBnElu::new(in_c, out_c, 3, 2, 1, rng));
            in_c = out_c;
        }
        DepthBranch {
            convs,
            fc1: Linear::new(in_c, BRANCH_MLP_HIDDEN, rng),
            fc2: Linear::new(BRANCH_MLP_HIDDEN, DEPTH_FEATURES, rng),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array2<T> {
        assert_eq!(x.dim().1, 1, "depth input must have one channel");
        let mut ys = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for conv in &mut self.convs {
            let y = conv.forward(&cur, train);
            ys.push(y.clone());
            cur = y;
        }
        let (_, _, h, w) = cur.dim();
        let feat = global_avg_pool(&cur);
        let h1 = elu(&self.fc1.forward(&feat));
        let out = self.fc2.forward(&h1);
        if train {
            self.cache = Some(DepthCache {
                ys,
                feat,
                h1,
                hw: (h, w),
            });
        }
        out
    }

    pub fn backward(&mut self, x: &Array4<T>, gy: &Array2<T>) {
        let c = self.cache.take().expect("forward(train) before backward");
        let g = self.fc2.backward(&c.h1, gy);
        let g = elu_backward(&c.h1, &g);
        let g = self.fc1.backward(&c.feat, &g);
        let mut g4 = global_avg_pool_backward(&g, c.hw.0, c.hw.1);
        for (k, conv) in self.convs.iter_mut().enumerate().rev() {
            let input = if k == 0 { x } else { &c.ys[k - 1] };
            g4 = conv.backward(input, &c.ys[k], &g4);
        }
    }
}

impl<T: Element> Params<T> for DepthBranch<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (k, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&join(prefix, &format!("conv{k}")), f);
        }
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        for (k, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_buffers(&join(prefix, &format!("conv{k}")), f);
        }
    }
}

/// Axis branch: a three-layer MLP over the flattened axis point
/// coordinates.
pub struct AxisBranch<T: Element> {
    pub fc0: Linear<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    cache: Option<(Array2<T>, Array2<T>)>,
}

impl<T: Element> AxisBranch<T> {
    pub fn new(axis_points: usize, rng: &mut ChaCha8Rng) -> Self {
        AxisBranch {
            fc0: Linear::new(2 * axis_points, BRANCH_MLP_HIDDEN, rng),
            fc1: Linear::new(BRANCH_MLP_HIDDEN, BRANCH_MLP_HIDDEN, rng),
            fc2: Linear::new(BRANCH_MLP_HIDDEN, AXIS_FEATURES, rng),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<T>, train: bool) -> Array2<T> {
        let h0 = elu(&self.fc0.forward(x));
        let h1 = elu(&self.fc1.forward(&h0));
        let out = self.fc2.forward(&h1);
        if train {
            self.cache = Some((h0, h1));
        }
        out
    }

    pub fn backward(&mut self, x: &Array2<T>, gy: &Array2<T>) {
        let (h0, h1) = self.cache.take().expect("forward(train) before backward");
        let g = self.fc2.backward(&h1, gy);
        let g = elu_backward(&h1, &g);
        let g = self.fc1.backward(&h0, &g);
        let g = elu_backward(&h0, &g);
        self.fc0.backward(x, &g);
    }
}

impl<T: Element> Params<T> for AxisBranch<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.fc0.visit_params(&join(prefix, "fc0"), f);
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }
}
