//! Sensing-area localization for a drop-in gamma probe held in a laparoscopic
//! grasper.
//!
//! The crate covers the full pipeline:
//!
//! * [`scenegen`] renders synthetic stereo scenes (cylindrical probe over a
//!   procedural tissue heightfield) with exact depth, probe masks, and the
//!   ground-truth sensing-area point where the probe axis meets the tissue.
//! * [`geometry`] holds the stereo camera model, depth/disparity conversions,
//!   back-projection, and the ray/heightfield intersection oracle.
//! * [`axis`] recovers the probe axis from a segmentation mask by PCA and
//!   samples the fixed-length axis-point feature fed to the network.
//! * [`dataio`] reads and writes the on-disk dataset layout (PNG, PFM,
//!   JSON labels, manifest) and assembles normalized training batches.
//! * [`nn`] is a small dtype-generic layer library (conv, batch norm, ELU,
//!   pooling, linear, Adam) with explicit forward/backward passes.
//! * [`model`] wires those layers into the three-branch network: nested
//!   ResNet image branch, depth-map CNN branch, probe-axis MLP branch, and
//!   the fused regression head.
//! * [`training`] and [`evaluation`] implement the squared-distance loss,
//!   the training loop with checkpointing, and report generation.
//!
//! Everything is deterministic for a fixed seed: RNG streams are derived per
//! purpose via [`seeds::derive_seed`], and reductions use fixed orders.

pub mod axis;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod scenegen;
pub mod seeds;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};
