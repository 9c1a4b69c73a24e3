//! Decoder: upsampling stages with global encoder skips, then pooling to a
//! feature vector.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::nn::{
    adaptive_avg_pool2d, adaptive_avg_pool2d_backward, elu, elu_backward, global_avg_pool,
    global_avg_pool_backward, join, upsample_nearest_2x, upsample_nearest_2x_backward,
    BatchNorm2d, Conv2d, Element, Param, Params,
};

struct StageCache<T> {
    up: Array4<T>,
    main: Array4<T>,
    pooled: Array4<T>,
    enc_hw: (usize, usize),
}

/// One decoder stage: nearest-neighbor x2 upsampling, a 3x3 convolution
/// halving the channels (batch norm, ELU), plus a skip from an encoder stage
/// projected by a 1x1 convolution and adaptively average-pooled to match.
pub struct DecoderStage<T: Element> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub skip: Conv2d<T>,
    cache: Option<StageCache<T>>,
}

impl<T: Element> DecoderStage<T> {
    pub fn new(in_c: usize, enc_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let out_c = in_c / 2;
        DecoderStage {
            conv: Conv2d::new(in_c, out_c, 3, 1, 1, false, rng),
            bn: BatchNorm2d::new(out_c),
            skip: Conv2d::new(enc_c, out_c, 1, 1, 0, true, rng),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, enc: &Array4<T>, train: bool) -> Array4<T> {
        let up = upsample_nearest_2x(x);
        let main = elu(&self.bn.forward(&self.conv.forward(&up), train));
        let (_, _, oh, ow) = main.dim();
        let (_, _, eh, ew) = enc.dim();
        let pooled = adaptive_avg_pool2d(enc, oh, ow);
        let mut y = self.skip.forward(&pooled);
        y += &main;
        if train {
            self.cache = Some(StageCache {
                up,
                main,
                pooled,
                enc_hw: (eh, ew),
            });
        }
        y
    }

    /// Returns gradients for the stage input and the encoder skip source.
    pub fn backward(&mut self, gy: &Array4<T>) -> (Array4<T>, Array4<T>) {
        let c = self.cache.take().expect("forward(train) before backward");
        let g_pool = self.skip.backward(&c.pooled, gy);
        let g_enc = adaptive_avg_pool2d_backward(&g_pool, c.enc_hw.0, c.enc_hw.1);
        let g = elu_backward(&c.main, gy);
        let g = self.bn.backward(&g);
        let g = self.conv.backward(&c.up, &g);
        (upsample_nearest_2x_backward(&g), g_enc)
    }
}

impl<T: Element> Params<T> for DecoderStage<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
        self.skip.visit_params(&join(prefix, "skip"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }
}

/// Decoder over the last encoder map. Stage `k` pairs with encoder stage
/// `3 - k`; global average pooling yields the image feature vector. With
/// zero stages the last encoder map is pooled directly.
pub struct Decoder<T: Element> {
    pub stages: Vec<DecoderStage<T>>,
    final_hw: Option<(usize, usize)>,
}

impl<T: Element> Decoder<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let chans = cfg.stage_channels();
        let stages = (0..cfg.decoder_stages)
            .map(|k| DecoderStage::new(chans[4] >> k, chans[cfg.skip_source(k)], rng))
            .collect();
        Decoder {
            stages,
            final_hw: None,
        }
    }

    /// `enc` holds the five encoder stage activations.
    pub fn forward(&mut self, enc: &[Array4<T>], train: bool) -> Array2<T> {
        assert_eq!(enc.len(), 5);
        let mut x = enc[4].clone();
        for (k, stage) in self.stages.iter_mut().enumerate() {
            x = stage.forward(&x, &enc[3 - k], train);
        }
        let (_, _, h, w) = x.dim();
        self.final_hw = Some((h, w));
        global_avg_pool(&x)
    }

    /// Returns the gradient for each encoder stage activation; index 4 is
    /// the main path, lower indices the skip taps (None when untouched).
    pub fn backward(&mut self, gfeat: &Array2<T>) -> Vec<Option<Array4<T>>> {
        let (h, w) = self.final_hw.take().expect("forward before backward");
        let mut g = global_avg_pool_backward(gfeat, h, w);
        let mut grads: Vec<Option<Array4<T>>> = (0..5).map(|_| None).collect();
        for k in (0..self.stages.len()).rev() {
            let (gx, g_enc) = self.stages[k].backward(&g);
            grads[3 - k] = Some(g_enc);
            g = gx;
        }
        grads[4] = Some(g);
        grads
    }
}

impl<T: Element> Params<T> for Decoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (k, s) in self.stages.iter_mut().enumerate() {
            s.visit_params(&join(prefix, &format!("s{k}")), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        for (k, s) in self.stages.iter_mut().enumerate() {
            s.visit_buffers(&join(prefix, &format!("s{k}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NestedEncoder;
    use crate::seeds::rng_for;
    use ndarray::Array4;
    use rand::Rng;

    fn cfg(decoder_stages: usize) -> ModelConfig {
        ModelConfig {
            base_channels: 8,
            block_counts: [1, 1, 1, 1],
            ebn_expansion: 2,
            decoder_stages,
            ..Default::default()
        }
    }

    fn run(cfg: &ModelConfig, hw: usize) -> (usize, usize) {
        let mut rng = rng_for(13, "test", 0);
        let mut enc = NestedEncoder::<f32>::new(cfg, 6, &mut rng);
        let mut dec = Decoder::<f32>::new(cfg, &mut rng);
        let x = Array4::<f32>::zeros((2, 6, hw, hw));
        let stages = enc.forward(&x, false);
        let feat = dec.forward(&stages, false);
        (feat.dim().0, feat.dim().1)
    }

    #[test]
    fn feature_length_matches_config() {
        for d in 0..=4 {
            let c = cfg(d);
            let (n, f) = run(&c, 64);
            assert_eq!(n, 2);
            assert_eq!(f, c.image_feature_len(), "decoder_stages {d}");
        }
    }

    #[test]
    fn stage_output_shapes_match_specs() {
        let c = cfg(2);
        let mut rng = rng_for(13, "test", 1);
        let mut enc = NestedEncoder::<f32>::new(&c, 6, &mut rng);
        let x = Array4::<f32>::zeros((1, 6, 64, 64));
        let stages = enc.forward(&x, false);

        let mut s0 = DecoderStage::<f32>::new(
            c.stage_channels()[4],
            c.stage_channels()[3],
            &mut rng,
        );
        let y = s0.forward(&stages[4], &stages[3], false);
        let specs = c.decoder_stage_specs(64, 64);
        assert_eq!(y.dim(), (1, specs[0].0, specs[0].1, specs[0].2));
    }

    #[test]
    fn backward_returns_grads_for_tapped_stages_only() {
        let c = cfg(2);
        let mut rng = rng_for(13, "test", 2);
        let mut enc = NestedEncoder::<f32>::new(&c, 6, &mut rng);
        let mut dec = Decoder::<f32>::new(&c, &mut rng);
        let x = Array4::from_shape_simple_fn((1, 6, 64, 64), || rng.random_range(-1.0f32..1.0));
        let stages = enc.forward(&x, true);
        let feat = dec.forward(&stages, true);
        let grads = dec.backward(&Array2::ones(feat.dim()));
        assert!(grads[4].is_some());
        assert!(grads[3].is_some(), "stage 0 taps encoder stage 3");
        assert!(grads[2].is_some(), "stage 1 taps encoder stage 2");
        assert!(grads[1].is_none());
        assert!(grads[0].is_none());
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                assert_eq!(g.dim(), stages[i].dim(), "stage {i} grad shape");
            }
        }
    }

    #[test]
    fn single_stage_gradcheck() {
        // Finite differences through upsample + conv + bn + elu + skip.
        let mut rng = rng_for(13, "test", 3);
        let mut stage = DecoderStage::<f64>::new(4, 6, &mut rng);
        let x = Array4::from_shape_simple_fn((2, 4, 3, 3), || rng.random_range(-1.0..1.0));
        let enc = Array4::from_shape_simple_fn((2, 6, 12, 12), || rng.random_range(-1.0..1.0));
        let gy = Array4::from_shape_simple_fn((2, 2, 6, 6), || rng.random_range(-1.0..1.0));

        stage.forward(&x, &enc, true);
        let (gx, g_enc) = stage.backward(&gy);

        let h = 1e-6;
        let loss = |stage: &mut DecoderStage<f64>, x: &Array4<f64>, enc: &Array4<f64>| -> f64 {
            let y = stage.forward(x, enc, true);
            y.iter().zip(gy.iter()).map(|(a, b)| a * b).sum()
        };
        for &idx in &[(0, 0, 0, 0), (1, 3, 2, 1)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = (loss(&mut stage, &xp, &enc) - loss(&mut stage, &xm, &enc)) / (2.0 * h);
            assert!(
                (num - gx[idx]).abs() < 1e-4 * (1.0 + num.abs()),
                "dx{idx:?}: numeric {num}, analytic {}",
                gx[idx]
            );
        }
        for &idx in &[(0, 0, 0, 0), (1, 5, 11, 7)] {
            let mut ep = enc.clone();
            ep[idx] += h;
            let mut em = enc.clone();
            em[idx] -= h;
            let num = (loss(&mut stage, &x, &ep) - loss(&mut stage, &x, &em)) / (2.0 * h);
            assert!(
                (num - g_enc[idx]).abs() < 1e-4 * (1.0 + num.abs()),
                "denc{idx:?}: numeric {num}, analytic {}",
                g_enc[idx]
            );
        }
        let _ = stage.cache.take();
    }
}
