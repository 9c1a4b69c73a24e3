//! Procedural tissue surface synthesis.
//!
//! Each scene gets a heightfield `z(x, y) = base + tilt + sinusoid` whose
//! tilt and phases are drawn per sample. The grid extent is sized from the
//! camera frustum so every pixel ray of both views crosses the surface.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{CameraRig, HeightField};

/// Heightfield grid spacing in mm.
const GRID_STEP_MM: f64 = 0.5;

/// Tissue surface family: a tilted plane plus a separable sinusoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceParams {
    /// Nominal camera-to-tissue distance (mm).
    pub base_depth_mm: f64,
    /// Peak bump amplitude (mm).
    pub amplitude_mm: f64,
    /// Bump frequency (cycles per mm).
    pub frequency_per_mm: f64,
    /// Maximum plane slope (mm of height per mm of travel).
    pub max_tilt: f64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        SurfaceParams {
            base_depth_mm: 60.0,
            amplitude_mm: 2.0,
            frequency_per_mm: 0.05,
            max_tilt: 0.15,
        }
    }
}

/// Builds a surface for one sample, drawing the tilt and sinusoid phases
/// from `rng`. The extent covers both stereo frustums with margin.
pub fn build_height_field(
    params: &SurfaceParams,
    rig: &CameraRig,
    rng: &mut ChaCha8Rng,
) -> Result<HeightField> {
    let tilt_x = rng.random_range(-params.max_tilt..=params.max_tilt);
    let tilt_y = rng.random_range(-params.max_tilt..=params.max_tilt);
    let phase_x = rng.random_range(0.0..std::f64::consts::TAU);
    let phase_y = rng.random_range(0.0..std::f64::consts::TAU);

    // Frustum footprint at the deepest plausible surface point. The tilt
    // term grows with the footprint, so estimate the slack once from a
    // first-pass extent and then finalize.
    let [o_x, o_y] = rig.principal;
    let (w, h) = (rig.width() as f64, rig.height() as f64);
    let span = |z: f64| {
        let x_lo = -(z * (o_x + 1.0) / rig.alpha + 5.0);
        let x_hi = z * (w - o_x) / rig.alpha + rig.baseline_mm + 5.0;
        let y_lo = -(z * (o_y + 1.0) / rig.beta + 5.0);
        let y_hi = z * (h - o_y) / rig.beta + 5.0;
        (x_lo, x_hi, y_lo, y_hi)
    };
    let z0 = params.base_depth_mm + params.amplitude_mm + 10.0;
    let (x_lo, x_hi, y_lo, y_hi) = span(z0);
    let slack = params.max_tilt
        * (x_lo.abs().max(x_hi.abs()) + y_lo.abs().max(y_hi.abs()));
    let (x_lo, x_hi, y_lo, y_hi) = span(z0 + slack);

    let nx = ((x_hi - x_lo) / GRID_STEP_MM).ceil() as usize + 1;
    let ny = ((y_hi - y_lo) / GRID_STEP_MM).ceil() as usize + 1;
    let omega = std::f64::consts::TAU * params.frequency_per_mm;
    let heights = Array2::from_shape_fn((ny, nx), |(j, i)| {
        let x = x_lo + (x_hi - x_lo) * i as f64 / (nx - 1) as f64;
        let y = y_lo + (y_hi - y_lo) * j as f64 / (ny - 1) as f64;
        params.base_depth_mm
            + tilt_x * x
            + tilt_y * y
            + params.amplitude_mm * (omega * x + phase_x).sin() * (omega * y + phase_y).sin()
    });
    HeightField::new(heights, (x_lo, x_hi), (y_lo, y_hi))
}
