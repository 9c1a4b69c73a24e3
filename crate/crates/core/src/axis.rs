//! Probe-axis recovery from a segmentation mask.
//!
//! The probe appears as an elongated blob in the mask. Its image-plane axis
//! is the major principal direction of the foreground pixel coordinates; the
//! network consumes a fixed-length feature of points sampled uniformly along
//! that axis inside the mask's axial extent.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Minimum foreground pixel count for a usable mask.
pub const MIN_MASK_PIXELS: usize = 100;
/// Minimum major/minor eigenvalue ratio; below this the blob has no
/// meaningful axis.
pub const MIN_EIGEN_RATIO: f64 = 1.05;
/// Number of axis points in the network's axis feature (100 scalars).
pub const AXIS_POINT_COUNT: usize = 50;

/// Binary probe segmentation mask, indexed `[row, column]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMask {
    data: Array2<bool>,
}

impl ProbeMask {
    pub fn new(data: Array2<bool>) -> Self {
        ProbeMask { data }
    }

    /// Builds a mask from 8-bit gray values; >= 128 is foreground.
    pub fn from_luma(data: &Array2<u8>) -> Self {
        ProbeMask {
            data: data.mapv(|g| g >= 128),
        }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<bool> {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data.get((v, u)).copied().unwrap_or(false)
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

/// Image-plane probe axis: centroid, unit direction, and the PCA
/// eigenvalues that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeAxis {
    /// Foreground centroid `(u, v)`.
    pub centroid: [f64; 2],
    /// Unit major direction, sign-canonicalized: `u > 0`, or `u == 0` and
    /// `v >= 0`.
    pub direction: [f64; 2],
    pub lambda_major: f64,
    pub lambda_minor: f64,
}

impl ProbeAxis {
    /// Signed axial coordinate of a point relative to the centroid.
    pub fn param(&self, u: f64, v: f64) -> f64 {
        (u - self.centroid[0]) * self.direction[0] + (v - self.centroid[1]) * self.direction[1]
    }
}

/// Extracts the probe axis by PCA over foreground pixel coordinates.
///
/// Fails with [`Error::MaskTooSmall`] below [`MIN_MASK_PIXELS`] foreground
/// pixels and [`Error::AmbiguousAxis`] when the eigenvalue ratio is under
/// [`MIN_EIGEN_RATIO`].
pub fn extract_axis(mask: &ProbeMask) -> Result<ProbeAxis> {
    let mut n = 0usize;
    let (mut su, mut sv) = (0.0f64, 0.0f64);
    for ((v, u), &fg) in mask.data.indexed_iter() {
        if fg {
            n += 1;
            su += u as f64;
            sv += v as f64;
        }
    }
    if n < MIN_MASK_PIXELS {
        return Err(Error::MaskTooSmall {
            count: n,
            min: MIN_MASK_PIXELS,
        });
    }
    let (cu, cv) = (su / n as f64, sv / n as f64);

    let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
    for ((v, u), &fg) in mask.data.indexed_iter() {
        if fg {
            let du = u as f64 - cu;
            let dv = v as f64 - cv;
            a += du * du;
            b += du * dv;
            c += dv * dv;
        }
    }
    a /= n as f64;
    b /= n as f64;
    c /= n as f64;

    // Eigenvalues of [[a, b], [b, c]].
    let half_trace = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let lambda_major = half_trace + disc;
    let lambda_minor = (half_trace - disc).max(0.0);

    let ratio = lambda_major / lambda_minor; // may be inf for perfect lines
    if !(ratio >= MIN_EIGEN_RATIO) {
        return Err(Error::AmbiguousAxis {
            ratio,
            min: MIN_EIGEN_RATIO,
        });
    }

    // Eigenvector of lambda_major: (b, lambda - a) unless that degenerates
    // (diagonal covariance), where the axes themselves are the eigenvectors.
    let mut dir = if b.abs() > 0.0 {
        let v = [b, lambda_major - a];
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        [v[0] / norm, v[1] / norm]
    } else if a >= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    if dir[0] < 0.0 || (dir[0] == 0.0 && dir[1] < 0.0) {
        dir = [-dir[0], -dir[1]];
    }

    Ok(ProbeAxis {
        centroid: [cu, cv],
        direction: dir,
        lambda_major,
        lambda_minor,
    })
}

/// Axis feature stored with each sample: the sampled points plus the axis
/// they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSample {
    /// Sampled axis points in pixels, sorted by axial parameter.
    pub points: Vec<Point2>,
    /// Unit major direction (sign-canonicalized).
    pub direction: [f64; 2],
    /// Foreground centroid `(u, v)`.
    pub centroid: [f64; 2],
}

impl AxisSample {
    /// Extracts the axis from `mask` and samples `count` points with the
    /// given seed.
    pub fn from_mask(mask: &ProbeMask, count: usize, seed: u64) -> Result<Self> {
        let axis = extract_axis(mask)?;
        let points = sample_axis_points(mask, &axis, count, seed);
        Ok(AxisSample {
            points,
            direction: axis.direction,
            centroid: axis.centroid,
        })
    }

    /// Interleaved `[u0, v0, u1, v1, ...]` coordinates.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.u, p.v]).collect()
    }
}

/// Samples `count` points uniformly along the axis within the mask's axial
/// extent, clips them to the image rectangle, and returns them sorted by
/// axial parameter.
pub fn sample_axis_points(
    mask: &ProbeMask,
    axis: &ProbeAxis,
    count: usize,
    seed: u64,
) -> Vec<Point2> {
    let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for ((v, u), &fg) in mask.data().indexed_iter() {
        if fg {
            let t = axis.param(u as f64, v as f64);
            t_min = t_min.min(t);
            t_max = t_max.max(t);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts: Vec<f64> = (0..count)
        .map(|_| rng.random_range(t_min..=t_max))
        .collect();
    ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    ts.into_iter()
        .map(|t| {
            let u = axis.centroid[0] + t * axis.direction[0];
            let v = axis.centroid[1] + t * axis.direction[1];
            Point2::new(u.clamp(0.0, w - 1.0), v.clamp(0.0, h - 1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Rasterizes a rotated rectangle centred at `c` with half-length `hl`,
    /// half-width `hw`, and major direction `angle_deg`.
    fn rect_mask(size: usize, c: [f64; 2], hl: f64, hw: f64, angle_deg: f64) -> ProbeMask {
        let th = angle_deg.to_radians();
        let d = [th.cos(), th.sin()];
        let p = [-d[1], d[0]];
        let mut m = Array2::from_elem((size, size), false);
        for ((v, u), cell) in m.indexed_iter_mut() {
            let du = u as f64 - c[0];
            let dv = v as f64 - c[1];
            let t = du * d[0] + dv * d[1];
            let s = du * p[0] + dv * p[1];
            *cell = t.abs() <= hl && s.abs() <= hw;
        }
        ProbeMask::new(m)
    }

    fn angle_diff_deg(dir: [f64; 2], angle_deg: f64) -> f64 {
        let got = dir[1].atan2(dir[0]).to_degrees();
        let mut d = (got - angle_deg).rem_euclid(180.0);
        if d > 90.0 {
            d = 180.0 - d;
        }
        d
    }

    #[test]
    fn horizontal_and_vertical_lines_give_exact_axes() {
        let mut m = Array2::from_elem((64, 256), false);
        for u in 20..220 {
            m[(30, u)] = true;
        }
        let axis = extract_axis(&ProbeMask::new(m)).unwrap();
        assert_eq!(axis.direction, [1.0, 0.0]);
        assert!((axis.centroid[0] - 119.5).abs() < 1e-9);
        assert_eq!(axis.centroid[1], 30.0);

        let mut m = Array2::from_elem((256, 64), false);
        for v in 10..150 {
            m[(v, 40)] = true;
        }
        let axis = extract_axis(&ProbeMask::new(m)).unwrap();
        // Canonical sign: a vertical axis points toward +v.
        assert_eq!(axis.direction, [0.0, 1.0]);
    }

    #[test]
    fn pca_recovers_rectangle_angle_within_half_degree() {
        for k in 0..24 {
            let angle = 7.5 * k as f64; // 0, 7.5, ..., 172.5 degrees
            // Boundaries off pixel centres: an edge exactly on a centre row
            // makes inclusion a floating-point knife edge at 0/90 degrees.
            let mask = rect_mask(256, [128.2, 127.7], 80.3, 8.3, angle);
            let axis = extract_axis(&mask).unwrap();
            let err = angle_diff_deg(axis.direction, angle);
            assert!(err < 0.5, "angle {angle}: direction off by {err} deg");
            assert!(axis.direction[0] > 0.0 || (axis.direction[0] == 0.0 && axis.direction[1] >= 0.0));
        }
    }

    #[test]
    fn sampled_points_lie_on_the_true_axis() {
        let angle = 33.0f64;
        let c = [128.0, 120.0];
        let mask = rect_mask(256, c, 80.0, 8.0, angle);
        let axis = extract_axis(&mask).unwrap();
        let pts = sample_axis_points(&mask, &axis, AXIS_POINT_COUNT, 99);
        assert_eq!(pts.len(), AXIS_POINT_COUNT);

        let th = angle.to_radians();
        let p = [-th.sin(), th.cos()];
        let mut last_t = f64::NEG_INFINITY;
        for q in &pts {
            // Distance to the true centerline through the known center.
            let d = ((q.u - c[0]) * p[0] + (q.v - c[1]) * p[1]).abs();
            assert!(d <= 3.0, "point {q:?} is {d} px off the true axis");
            // Inside the mask's axial extent (rectangle half-length + raster slack).
            let t = axis.param(q.u, q.v);
            assert!(t.abs() <= 81.0, "point {q:?} outside axial extent (t = {t})");
            assert!(t >= last_t, "points not sorted by axial parameter");
            last_t = t;
            assert!(q.u >= 0.0 && q.u <= 255.0 && q.v >= 0.0 && q.v <= 255.0);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mask = rect_mask(256, [128.0, 128.0], 80.0, 8.0, 61.0);
        let axis = extract_axis(&mask).unwrap();
        let a = sample_axis_points(&mask, &axis, 50, 7);
        let b = sample_axis_points(&mask, &axis, 50, 7);
        let c = sample_axis_points(&mask, &axis, 50, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn points_get_clipped_to_the_image_rectangle() {
        // Rectangle hanging off the left edge: axis extends outside.
        let mask = rect_mask(128, [10.0, 64.0], 70.0, 6.0, 0.0);
        let axis = extract_axis(&mask).unwrap();
        let pts = sample_axis_points(&mask, &axis, 50, 3);
        for q in pts {
            assert!(q.u >= 0.0 && q.u <= 127.0 && q.v >= 0.0 && q.v <= 127.0);
        }
    }

    #[test]
    fn small_masks_are_rejected() {
        // Exactly 99 distinct foreground pixels: one short of the minimum.
        let mut m = Array2::from_elem((64, 64), false);
        let mut placed = 0;
        'outer: for v in 0..64 {
            for u in 0..64 {
                if placed == 99 {
                    break 'outer;
                }
                if (u + v) % 2 == 0 {
                    m[(v, u)] = true;
                    placed += 1;
                }
            }
        }
        assert!(matches!(
            extract_axis(&ProbeMask::new(m)),
            Err(Error::MaskTooSmall { count: 99, .. })
        ));
    }

    #[test]
    fn isotropic_masks_are_ambiguous() {
        // Filled disk: eigenvalue ratio ~ 1.
        let mut m = Array2::from_elem((128, 128), false);
        for ((v, u), cell) in m.indexed_iter_mut() {
            let du = u as f64 - 64.0;
            let dv = v as f64 - 64.0;
            *cell = du * du + dv * dv <= 30.0 * 30.0;
        }
        assert!(matches!(
            extract_axis(&ProbeMask::new(m)),
            Err(Error::AmbiguousAxis { .. })
        ));
        // Axis-aligned square: exactly isotropic.
        let mut m = Array2::from_elem((128, 128), false);
        for v in 40..80 {
            for u in 40..80 {
                m[(v, u)] = true;
            }
        }
        assert!(matches!(
            extract_axis(&ProbeMask::new(m)),
            Err(Error::AmbiguousAxis { .. })
        ));
    }
}
