//! Model configuration and static shape arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature width produced by the depth branch.
pub const DEPTH_FEATURES: usize = 64;
/// Feature width produced by the axis branch.
pub const AXIS_FEATURES: usize = 64;
/// Depth-branch conv channel progression (input is a single channel).
pub const DEPTH_CHANNELS: [usize; 4] = [16, 32, 64, 128];
/// Hidden width of the depth and axis MLPs.
pub const BRANCH_MLP_HIDDEN: usize = 128;

/// Which input branches the network uses. At least one must be enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchFlags {
    pub image: bool,
    pub depth: bool,
    pub axis: bool,
}

impl Default for BranchFlags {
    fn default() -> Self {
        BranchFlags {
            image: true,
            depth: true,
            axis: true,
        }
    }
}

impl BranchFlags {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        usize::from(self.image) + usize::from(self.depth) + usize::from(self.axis)
    }
}

/// `(channels, height, width)` of a feature map.
pub type MapSpec = (usize, usize, usize);

/// Network architecture parameters.
///
/// The image branch is a nested ResNet: a 7x7/stride-2 stem (no extra
/// pooling reduction), four encoder modules of one expanded bottleneck
/// (stride 2) followed by `block_counts[i] - 1` standard bottlenecks, and a
/// decoder of `decoder_stages` upsampling stages, each halving channels and
/// adding a projected global skip from the matching encoder stage, ending in
/// global average pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Stem output channels (paper-scale 64; desk-scale 16 or 8).
    pub base_channels: usize,
    /// Total blocks per encoder module, the expanded bottleneck included.
    pub block_counts: [usize; 4],
    /// Channel expansion of the expanded bottleneck output; 4 or 2.
    pub ebn_expansion: usize,
    /// Decoder upsampling stages, 0 to 4; 0 pools the last encoder map.
    pub decoder_stages: usize,
    pub branches: BranchFlags,
    /// Hidden layer widths of the fusion head MLP.
    pub head_hidden: Vec<usize>,
    /// Axis points in the axis-branch input (2 scalars each).
    pub axis_points: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 64,
            block_counts: [3, 4, 6, 3],
            ebn_expansion: 4,
            decoder_stages: 2,
            branches: BranchFlags::all(),
            head_hidden: vec![128],
            axis_points: 50,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if !(self.ebn_expansion == 2 || self.ebn_expansion == 4) {
            return Err(Error::Config(format!(
                "ebn_expansion must be 2 or 4, got {}",
                self.ebn_expansion
            )));
        }
        if self.block_counts.iter().any(|&b| b == 0) {
            return Err(Error::Config(format!(
                "block_counts must all be at least 1, got {:?}",
                self.block_counts
            )));
        }
        if self.decoder_stages > 4 {
            return Err(Error::Config(format!(
                "decoder_stages must be at most 4, got {}",
                self.decoder_stages
            )));
        }
        if self.branches.count() == 0 {
            return Err(Error::Config("at least one branch must be enabled".into()));
        }
        if self.axis_points == 0 && self.branches.axis {
            return Err(Error::Config("axis_points must be positive".into()));
        }
        // Channel divisibility along the encoder: each module's expanded
        // bottleneck halves its input channel count internally, and the
        // standard bottlenecks quarter their (expanded) channel count.
        let chans = self.stage_channels();
        for i in 0..4 {
            let c_in = chans[i];
            if c_in % 2 != 0 {
                return Err(Error::Config(format!(
                    "module {} input channels {c_in} not divisible by 2",
                    i + 1
                )));
            }
            if self.block_counts[i] > 1 && chans[i + 1] % 4 != 0 {
                return Err(Error::Config(format!(
                    "module {} channels {} not divisible by 4",
                    i + 1,
                    chans[i + 1]
                )));
            }
        }
        if self.decoder_stages > 0 {
            let c4 = chans[4];
            if c4 % (1 << self.decoder_stages) != 0 {
                return Err(Error::Config(format!(
                    "decoder cannot halve {c4} channels {} times",
                    self.decoder_stages
                )));
            }
        }
        Ok(())
    }

    /// Output channels of the stem and the four encoder modules.
    pub fn stage_channels(&self) -> [usize; 5] {
        let mut c = [0; 5];
        c[0] = self.base_channels;
        for i in 1..5 {
            c[i] = c[i - 1] * self.ebn_expansion;
        }
        c
    }

    /// Spatial sizes require divisibility by 32 (one stem halving plus four
    /// stride-2 modules).
    pub fn check_input_hw(&self, h: usize, w: usize) -> Result<()> {
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::Contract(format!(
                "input spatial size {h}x{w} must be divisible by 32"
            )));
        }
        Ok(())
    }

    /// `(c, h, w)` of the stem output and each encoder module output.
    pub fn encoder_stage_specs(&self, h: usize, w: usize) -> [MapSpec; 5] {
        let chans = self.stage_channels();
        let mut specs = [(0, 0, 0); 5];
        for (i, spec) in specs.iter_mut().enumerate() {
            let f = 2usize << i; // stem: /2, module i: /2^(i+1)
            *spec = (chans[i], h / f, w / f);
        }
        specs
    }

    /// `(c, h, w)` after each decoder stage.
    pub fn decoder_stage_specs(&self, h: usize, w: usize) -> Vec<MapSpec> {
        let c4 = self.stage_channels()[4];
        (0..self.decoder_stages)
            .map(|k| (c4 >> (k + 1), h >> (4 - k), w >> (4 - k)))
            .collect()
    }

    /// Encoder stage index whose output feeds decoder stage `k`'s skip.
    pub fn skip_source(&self, k: usize) -> usize {
        3 - k
    }

    /// Length of the image-branch feature vector.
    pub fn image_feature_len(&self) -> usize {
        let c4 = self.stage_channels()[4];
        if self.decoder_stages == 0 {
            c4
        } else {
            c4 >> self.decoder_stages
        }
    }

    /// Width of the concatenated feature entering the fusion head.
    pub fn head_in_features(&self) -> usize {
        let mut f = 0;
        if self.branches.image {
            f += self.image_feature_len();
        }
        if self.branches.depth {
            f += DEPTH_FEATURES;
        }
        if self.branches.axis {
            f += AXIS_FEATURES;
        }
        f
    }
}
