//! The three-branch localization network.
//!
//! The image branch is a nested ResNet encoder/decoder over the stacked
//! stereo pair, the depth branch a small strided CNN over the depth map, and
//! the axis branch an MLP over sampled probe-axis points. Their feature
//! vectors are concatenated and a fully connected head regresses the
//! sensing-area position, squashed to the unit square by a sigmoid.
//!
//! Every component exposes an explicit `forward` and a `backward` that
//! accumulates parameter gradients, mirroring the layer modules in
//! [`crate::nn`]. Composites cache intermediate activations during training
//! forward passes and consume them in backward.

mod blocks;
mod branches;
mod config;
mod decoder;
mod encoder;
mod head;
mod network;

pub use blocks::{ConvBnElu, ExpandedBottleneck, StandardBottleneck};
pub use branches::{AxisBranch, DepthBranch};
pub use config::{
    BranchFlags, MapSpec, ModelConfig, AXIS_FEATURES, BRANCH_MLP_HIDDEN, DEPTH_CHANNELS,
    DEPTH_FEATURES,
};
pub use decoder::{Decoder, DecoderStage};
pub use encoder::{EncoderModule, NestedEncoder, Stem};
pub use head::FusionHead;
pub use network::{ImageBranch, Model, ModelInputs};
