//! Nested ResNet encoder: stem plus four bottleneck modules.

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;

use super::blocks::{ExpandedBottleneck, StandardBottleneck};
use super::config::ModelConfig;
use crate::nn::{
    elu, elu_backward, join, BatchNorm2d, Conv2d, Element, MaxPool2d, Param, Params,
};

/// Input stem: 7x7 stride-2 convolution, batch norm, ELU, then a 3x3
/// stride-1 max pool (padding 1), for a net x2 spatial reduction.
#[derive(Debug)]
pub struct Stem<T: Element> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pool: MaxPool2d,
    cache: Option<Array4<T>>,
}

impl<T: Element> Stem<T> {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        Stem {
            conv: Conv2d::new(in_c, out_c, 7, 2, 3, false, rng),
            bn: BatchNorm2d::new(out_c),
            pool: MaxPool2d::new(3, 1, 1),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let a = elu(&self.bn.forward(&self.conv.forward(x), train));
        let y = self.pool.forward(&a);
        if train {
            self.cache = Some(a);
        }
        y
    }

    pub fn backward(&mut self, x: &Array4<T>, gy: &Array4<T>) -> Array4<T> {
        let a = self.cache.take().expect("forward(train) before backward");
        let g = self.pool.backward(gy);
        let g = elu_backward(&a, &g);
        let g = self.bn.backward(&g);
        self.conv.backward(x, &g)
    }
}

impl<T: Element> Params<T> for Stem<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }
}

/// One encoder module: an expanded bottleneck at stride 2 followed by
/// `blocks - 1` standard bottlenecks at the expanded channel count.
#[derive(Debug)]
pub struct EncoderModule<T: Element> {
    pub ebn: ExpandedBottleneck<T>,
    pub sbns: Vec<StandardBottleneck<T>>,
    /// Outputs of every block except the last (the module output, which the
    /// caller keeps as the stage activation).
    cache: Option<Vec<Array4<T>>>,
}

impl<T: Element> EncoderModule<T> {
    pub fn new(in_c: usize, expansion: usize, blocks: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(blocks >= 1, "module needs at least the expanded bottleneck");
        let ebn = ExpandedBottleneck::new(in_c, expansion, 2, rng);
        let out_c = in_c * expansion;
        let sbns = (1..blocks)
            .map(|_| StandardBottleneck::new(out_c, rng))
            .collect();
        EncoderModule {
            ebn,
            sbns,
            cache: None,
        }
    }

    pub fn zero_residual_scales(&mut self) {
        self.ebn.zero_residual_scale();
        for sbn in &mut self.sbns {
            sbn.zero_residual_scale();
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let mut ys = Vec::with_capacity(self.sbns.len());
        let mut y = self.ebn.forward(x, train);
        for sbn in &mut self.sbns {
            let next = sbn.forward(&y, train);
            ys.push(y);
            y = next;
        }
        if train {
            self.cache = Some(ys);
        }
        y
    }

    /// `x` is the module input, `y` the module output from forward.
    pub fn backward(&mut self, x: &Array4<T>, y: &Array4<T>, gy: &Array4<T>) -> Array4<T> {
        let ys = self.cache.take().expect("forward(train) before backward");
        let mut g = gy.clone();
        for (k, sbn) in self.sbns.iter_mut().enumerate().rev() {
            let block_in = &ys[k];
            let block_out = if k + 1 == ys.len() { y } else { &ys[k + 1] };
            g = sbn.backward(block_in, block_out, &g);
        }
        let ebn_out = ys.first().unwrap_or(y);
        self.ebn.backward(x, ebn_out, &g)
    }
}

impl<T: Element> Params<T> for EncoderModule<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.ebn.visit_params(&join(prefix, "b0"), f);
        for (k, sbn) in self.sbns.iter_mut().enumerate() {
            sbn.visit_params(&join(prefix, &format!("b{}", k + 1)), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.ebn.visit_buffers(&join(prefix, "b0"), f);
        for (k, sbn) in self.sbns.iter_mut().enumerate() {
            sbn.visit_buffers(&join(prefix, &format!("b{}", k + 1)), f);
        }
    }
}

/// Stem plus four modules; produces five stage activations (the stem output
/// and each module output) so the decoder can tap global skips.
#[derive(Debug)]
pub struct NestedEncoder<T: Element> {
    pub stem: Stem<T>,
    pub modules: Vec<EncoderModule<T>>,
}

impl<T: Element> NestedEncoder<T> {
    pub fn new(cfg: &ModelConfig, in_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let chans = cfg.stage_channels();
        let stem = Stem::new(in_c, chans[0], rng);
        let modules = (0..4)
            .map(|i| EncoderModule::new(chans[i], cfg.ebn_expansion, cfg.block_counts[i], rng))
            .collect();
        NestedEncoder { stem, modules }
    }

    pub fn zero_residual_scales(&mut self) {
        for m in &mut self.modules {
            m.zero_residual_scales();
        }
    }

    /// Returns the five stage activations, stem output first.
    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Vec<Array4<T>> {
        let mut stages = Vec::with_capacity(5);
        stages.push(self.stem.forward(x, train));
        for m in &mut self.modules {
            let y = m.forward(stages.last().unwrap(), train);
            stages.push(y);
        }
        stages
    }

    /// `stage_grads[i]` is the gradient flowing into stage `i`'s activation;
    /// index 4 (the last module output) is required, the rest optional skip
    /// contributions. Returns the gradient with respect to the input.
    pub fn backward(
        &mut self,
        x: &Array4<T>,
        stages: &[Array4<T>],
        mut stage_grads: Vec<Option<Array4<T>>>,
    ) -> Array4<T> {
        assert_eq!(stages.len(), 5);
        assert_eq!(stage_grads.len(), 5);
        let mut g = stage_grads[4]
            .take()
            .expect("gradient for the final stage is required");
        for i in (1..=4).rev() {
            g = self.modules[i - 1].backward(&stages[i - 1], &stages[i], &g);
            if let Some(sg) = stage_grads[i - 1].take() {
                g += &sg;
            }
        }
        self.stem.backward(x, &g)
    }
}

impl<T: Element> Params<T> for NestedEncoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stem.visit_params(&join(prefix, "stem"), f);
        for (i, m) in self.modules.iter_mut().enumerate() {
            m.visit_params(&join(prefix, &format!("m{}", i + 1)), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.stem.visit_buffers(&join(prefix, "stem"), f);
        for (i, m) in self.modules.iter_mut().enumerate() {
            m.visit_buffers(&join(prefix, &format!("m{}", i + 1)), f);
        }
    }
}
