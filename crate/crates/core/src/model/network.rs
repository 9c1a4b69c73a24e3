//! Assembly of the branches and head into the full localization network.

use ndarray::{Array2, Array4};

use super::branches::{AxisBranch, DepthBranch};
use super::config::{ModelConfig, AXIS_FEATURES, DEPTH_FEATURES};
use super::decoder::Decoder;
use super::encoder::NestedEncoder;
use super::head::FusionHead;
use crate::error::{Error, Result};
use crate::nn::{join, Element, Param, Params};
use crate::seeds::rng_for;

/// Nested ResNet over the stacked stereo pair: encoder, decoder, pooled
/// feature vector.
pub struct ImageBranch<T: Element> {
    pub encoder: NestedEncoder<T>,
    pub decoder: Decoder<T>,
    stages: Option<Vec<Array4<T>>>,
}

impl<T: Element> ImageBranch<T> {
    fn new(cfg: &ModelConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        ImageBranch {
            encoder: NestedEncoder::new(cfg, 6, rng),
            decoder: Decoder::new(cfg, rng),
            stages: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array2<T> {
        let stages = self.encoder.forward(x, train);
        let feat = self.decoder.forward(&stages, train);
        if train {
            self.stages = Some(stages);
        }
        feat
    }

    pub fn backward(&mut self, x: &Array4<T>, gfeat: &Array2<T>) {
        let stages = self.stages.take().expect("forward(train) before backward");
        let stage_grads = self.decoder.backward(gfeat);
        self.encoder.backward(x, &stages, stage_grads);
    }
}

impl<T: Element> Params<T> for ImageBranch<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.decoder.visit_params(&join(prefix, "decoder"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        self.encoder.visit_buffers(&join(prefix, "encoder"), f);
        self.decoder.visit_buffers(&join(prefix, "decoder"), f);
    }
}

/// One batch of network inputs. Only the tensors for enabled branches are
/// consulted; missing required tensors are a contract error.
#[derive(Debug, Clone)]
pub struct ModelInputs<T> {
    /// Stacked stereo pair, `[n, 6, h, w]`.
    pub images: Option<Array4<T>>,
    /// Normalized depth map, `[n, 1, h, w]`.
    pub depth: Option<Array4<T>>,
    /// Flattened axis points, `[n, 2 * axis_points]`.
    pub axis: Option<Array2<T>>,
}

impl<T> ModelInputs<T> {
    pub fn batch_size(&self) -> Option<usize> {
        self.images
            .as_ref()
            .map(|a| a.dim().0)
            .or_else(|| self.depth.as_ref().map(|a| a.dim().0))
            .or_else(|| self.axis.as_ref().map(|a| a.dim().0))
    }
}

/// The full three-branch network.
pub struct Model<T: Element> {
    pub cfg: ModelConfig,
    pub image: Option<ImageBranch<T>>,
    pub depth: Option<DepthBranch<T>>,
    pub axis: Option<AxisBranch<T>>,
    pub head: FusionHead<T>,
}

impl<T: Element> Model<T> {
    /// Builds the network with weights drawn from a single seeded stream in
    /// a fixed order (image, depth, axis, head), so a given seed and config
    /// always produce the same initialization. `zero_init_residual` zeroes
    /// the final norm scale of every bottleneck's main path, the
    /// initialization used for training; leave it off for gradient checks
    /// so those paths carry signal immediately.
    pub fn build(cfg: &ModelConfig, seed: u64, zero_init_residual: bool) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(seed, "init", 0);
        let mut image = cfg
            .branches
            .image
            .then(|| ImageBranch::new(cfg, &mut rng));
        let depth = cfg.branches.depth.then(|| DepthBranch::new(&mut rng));
        let axis = cfg
            .branches
            .axis
            .then(|| AxisBranch::new(cfg.axis_points, &mut rng));

        let mut widths = Vec::new();
        if cfg.branches.image {
            widths.push(cfg.image_feature_len());
        }
        if cfg.branches.depth {
            widths.push(DEPTH_FEATURES);
        }
        if cfg.branches.axis {
            widths.push(AXIS_FEATURES);
        }
        let head = FusionHead::new(widths, &cfg.head_hidden, &mut rng);

        if zero_init_residual {
            if let Some(img) = &mut image {
                img.encoder.zero_residual_scales();
            }
        }
        Ok(Model {
            cfg: cfg.clone(),
            image,
            depth,
            axis,
            head,
        })
    }

    fn check_inputs(&self, inputs: &ModelInputs<T>) -> Result<usize> {
        let n = inputs
            .batch_size()
            .ok_or_else(|| Error::Contract("empty model inputs".into()))?;
        if self.cfg.branches.image {
            let x = inputs
                .images
                .as_ref()
                .ok_or_else(|| Error::Contract("image branch enabled but no images".into()))?;
            let (bn, c, h, w) = x.dim();
            if bn != n || c != 6 {
                return Err(Error::Contract(format!(
                    "images must be [{n}, 6, h, w], got {:?}",
                    x.dim()
                )));
            }
            self.cfg.check_input_hw(h, w)?;
        }
        if self.cfg.branches.depth {
            let x = inputs
                .depth
                .as_ref()
                .ok_or_else(|| Error::Contract("depth branch enabled but no depth".into()))?;
            let (bn, c, _, _) = x.dim();
            if bn != n || c != 1 {
                return Err(Error::Contract(format!(
                    "depth must be [{n}, 1, h, w], got {:?}",
                    x.dim()
                )));
            }
        }
        if self.cfg.branches.axis {
            let x = inputs
                .axis
                .as_ref()
                .ok_or_else(|| Error::Contract("axis branch enabled but no axis points".into()))?;
            let want = 2 * self.cfg.axis_points;
            if x.dim() != (n, want) {
                return Err(Error::Contract(format!(
                    "axis input must be [{n}, {want}], got {:?}",
                    x.dim()
                )));
            }
        }
        Ok(n)
    }

    /// Predicted coordinates in the unit square, `[n, 2]`.
    pub fn forward(&mut self, inputs: &ModelInputs<T>, train: bool) -> Result<Array2<T>> {
        self.check_inputs(inputs)?;
        let mut feats = Vec::new();
        if let Some(branch) = &mut self.image {
            feats.push(branch.forward(inputs.images.as_ref().unwrap(), train));
        }
        if let Some(branch) = &mut self.depth {
            feats.push(branch.forward(inputs.depth.as_ref().unwrap(), train));
        }
        if let Some(branch) = &mut self.axis {
            feats.push(branch.forward(inputs.axis.as_ref().unwrap(), train));
        }
        Ok(self.head.forward(&feats, train))
    }

    /// Accumulates parameter gradients for the batch used in the preceding
    /// training-mode forward pass.
    pub fn backward(&mut self, inputs: &ModelInputs<T>, gy: &Array2<T>) {
        let grads = self.head.backward(gy);
        let mut it = grads.into_iter();
        if let Some(branch) = &mut self.image {
            branch.backward(inputs.images.as_ref().unwrap(), &it.next().unwrap());
        }
        if let Some(branch) = &mut self.depth {
            branch.backward(inputs.depth.as_ref().unwrap(), &it.next().unwrap());
        }
        if let Some(branch) = &mut self.axis {
            branch.backward(inputs.axis.as_ref().unwrap(), &it.next().unwrap());
        }
    }
}

impl<T: Element> Params<T> for Model<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        if let Some(b) = &mut self.image {
            b.visit_params(&join(prefix, "image"), f);
        }
        if let Some(b) = &mut self.depth {
            b.visit_params(&join(prefix, "depth"), f);
        }
        if let Some(b) = &mut self.axis {
            b.visit_params(&join(prefix, "axis"), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ndarray::ArrayD<T>)) {
        if let Some(b) = &mut self.image {
            b.visit_buffers(&join(prefix, "image"), f);
        }
        if let Some(b) = &mut self.depth {
            b.visit_buffers(&join(prefix, "depth"), f);
        }
    }
}
