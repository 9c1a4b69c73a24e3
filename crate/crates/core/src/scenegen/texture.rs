//! Procedural value-noise texture for the tissue surface.
//!
//! Two octaves of hash-based value noise over millimetre coordinates give
//! low-frequency mottling without any stored assets, and the same seed
//! always reproduces the same field.

/// Bijective 64-bit mix (SplitMix64 finalizer).
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic lattice value in [0, 1) for an integer grid node.
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix(seed ^ mix(ix as u64).wrapping_add(mix((iy as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise in [0, 1): smooth bilinear interpolation between lattice nodes.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (ix, iy) = (x0 as i64, y0 as i64);
    let (tx, ty) = (smoothstep(x - x0), smoothstep(y - y0));
    let v00 = lattice(seed, ix, iy);
    let v10 = lattice(seed, ix + 1, iy);
    let v01 = lattice(seed, ix, iy + 1);
    let v11 = lattice(seed, ix + 1, iy + 1);
    let top = v00 * (1.0 - tx) + v10 * tx;
    let bottom = v01 * (1.0 - tx) + v11 * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Two-octave tissue mottling field over millimetre coordinates.
#[derive(Debug, Clone, Copy)]
pub struct TissueTexture {
    seed: u64,
}

impl TissueTexture {
    pub fn new(seed: u64) -> Self {
        TissueTexture { seed }
    }

    /// Texture value in [0, 1] at a surface position (mm).
    pub fn eval(&self, x_mm: f64, y_mm: f64) -> f64 {
        let coarse = value_noise(self.seed, x_mm * 0.3, y_mm * 0.3);
        let fine = value_noise(mix(self.seed ^ 0x517c_c1b7_2722_0a95), x_mm * 0.6, y_mm * 0.6);
        (coarse + 0.5 * fine) / 1.5
    }
}
