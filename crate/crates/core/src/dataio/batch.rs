//! Padding, resizing, coordinate bookkeeping, and batch assembly.
//!
//! Images are zero-padded to a square, resized to the network input size,
//! and standardized per channel. Every label coordinate is carried through
//! the same transform, so predictions can be mapped back to original-image
//! pixels exactly.

use ndarray::{s, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::dataio::{NormStats, StereoSample};
use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Guard against division by a degenerate standard deviation.
const MIN_STD: f64 = 1e-12;

/// Maps coordinates between an original `H x W` image, its zero-padded
/// `S x S` square (`S = max(H, W)`, padding split evenly), and the [0,1]
/// normalized frame used for regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordTransform {
    /// Side length of the padded square.
    pub square: usize,
    /// Rows of padding added above the image.
    pub top: usize,
    /// Columns of padding added left of the image.
    pub left: usize,
}

impl CoordTransform {
    pub fn for_size(height: usize, width: usize) -> Self {
        let square = height.max(width);
        CoordTransform {
            square,
            top: (square - height) / 2,
            left: (square - width) / 2,
        }
    }

    /// Original-image pixel to normalized `[u, v]` in [0,1].
    pub fn normalize(&self, p: &Point2) -> [f64; 2] {
        let s = self.square as f64;
        [(p.u + self.left as f64) / s, (p.v + self.top as f64) / s]
    }

    /// Normalized `[u, v]` back to original-image pixels.
    pub fn denormalize(&self, norm: [f64; 2]) -> Point2 {
        let s = self.square as f64;
        Point2::new(norm[0] * s - self.left as f64, norm[1] * s - self.top as f64)
    }

    /// Original-image pixel to its position in the square resized to
    /// `target x target`, using the pixel-center convention of
    /// [`resize_bilinear`].
    pub fn to_resized(&self, p: &Point2, target: usize) -> Point2 {
        let scale = target as f64 / self.square as f64;
        Point2::new(
            (p.u + self.left as f64 + 0.5) * scale - 0.5,
            (p.v + self.top as f64 + 0.5) * scale - 0.5,
        )
    }

    /// Inverse of [`CoordTransform::to_resized`].
    pub fn from_resized(&self, p: &Point2, target: usize) -> Point2 {
        let scale = self.square as f64 / target as f64;
        Point2::new(
            (p.u + 0.5) * scale - 0.5 - self.left as f64,
            (p.v + 0.5) * scale - 0.5 - self.top as f64,
        )
    }
}

/// Zero-pads an `H x W x c` image to `S x S x c` with the short dimension
/// split evenly; returns the transform holding the `(top, left)` offset.
pub fn pad_to_square(image: &Array3<u8>) -> (Array3<u8>, CoordTransform) {
    let (h, w, c) = image.dim();
    let tf = CoordTransform::for_size(h, w);
    let mut out = Array3::zeros((tf.square, tf.square, c));
    out.slice_mut(s![tf.top..tf.top + h, tf.left..tf.left + w, ..])
        .assign(image);
    (out, tf)
}

/// Zero-pads a single `H x W` plane to `S x S`.
pub fn pad_plane_to_square(plane: &Array2<f64>) -> (Array2<f64>, CoordTransform) {
    let (h, w) = plane.dim();
    let tf = CoordTransform::for_size(h, w);
    let mut out = Array2::zeros((tf.square, tf.square));
    out.slice_mut(s![tf.top..tf.top + h, tf.left..tf.left + w])
        .assign(plane);
    (out, tf)
}

/// Bilinear resize with the pixel-center convention: output pixel `d` samples
/// the source at `(d + 0.5) * src / dst - 0.5`, clamped to the source grid.
pub fn resize_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0, "empty resize");
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let sy = ((y as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let sx = ((x as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let top = src[(y0, x0)] * (1.0 - fx) + src[(y0, x1)] * fx;
        let bottom = src[(y1, x0)] * (1.0 - fx) + src[(y1, x1)] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Nearest-neighbor resize for masks and other categorical planes.
pub fn resize_nearest(src: &Array2<bool>, out_h: usize, out_w: usize) -> Array2<bool> {
    let (h, w) = src.dim();
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0, "empty resize");
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let sy = ((y as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let sx = ((x as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        src[(sy.round() as usize, sx.round() as usize)]
    })
}

/// A model-ready mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `N x 6 x T x T`, channels 0..3 left RGB and 3..6 right RGB, each
    /// standardized with the manifest statistics.
    pub images: Array4<f32>,
    /// `N x 1 x T x T` standardized depth, invalid pixels zero-filled.
    pub depths: Array4<f32>,
    /// `N x 2k` interleaved normalized `(u, v)` axis points.
    pub axis_points: Array2<f32>,
    /// `N x 2` normalized ground-truth coordinates.
    pub targets: Array2<f32>,
    /// `N x 2` raw ground-truth pixels at original resolution.
    pub pixel_targets: Array2<f64>,
    /// Shared original-to-normalized coordinate transform.
    pub transform: CoordTransform,
    pub target_size: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Assembles a batch: pad to square, bilinear-resize images and depth to
/// `target_size`, standardize with `stats`, and normalize every coordinate
/// by the padded square size. All samples must share one camera rig.
pub fn make_batch(
    samples: &[&StereoSample],
    target_size: usize,
    stats: &NormStats,
) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot build an empty batch".into()));
    }
    if target_size == 0 {
        return Err(Error::Contract("target_size must be positive".into()));
    }
    let first = samples[0];
    let axis_len = first.axis.points.len();
    for s in samples {
        if s.rig != first.rig {
            return Err(Error::Contract(format!(
                "heterogeneous rigs in one batch: {} vs {}",
                first.sample_id, s.sample_id
            )));
        }
        if s.axis.points.len() != axis_len {
            return Err(Error::Contract(format!(
                "axis point count mismatch: {} has {}, {} has {}",
                first.sample_id,
                axis_len,
                s.sample_id,
                s.axis.points.len()
            )));
        }
    }

    let n = samples.len();
    let t = target_size;
    let tf = CoordTransform::for_size(first.height(), first.width());
    let mut images = Array4::<f32>::zeros((n, 6, t, t));
    let mut depths = Array4::<f32>::zeros((n, 1, t, t));
    let mut axis_points = Array2::<f32>::zeros((n, 2 * axis_len));
    let mut targets = Array2::<f32>::zeros((n, 2));
    let mut pixel_targets = Array2::<f64>::zeros((n, 2));
    let mut ids = Vec::with_capacity(n);

    for (i, sample) in samples.iter().enumerate() {
        for (side, img) in [&sample.left, &sample.right].into_iter().enumerate() {
            for c in 0..3 {
                let plane = img.slice(s![.., .., c]).mapv(|v| f64::from(v) / 255.0);
                let (padded, _) = pad_plane_to_square(&plane);
                let resized = resize_bilinear(&padded, t, t);
                let ch = 3 * side + c;
                let (mean, std) = (stats.image_mean[ch], stats.image_std[ch].max(MIN_STD));
                images
                    .slice_mut(s![i, ch, .., ..])
                    .assign(&resized.mapv(|v| ((v - mean) / std) as f32));
            }
        }

        let (padded, _) = pad_plane_to_square(sample.depth.data());
        let resized = resize_bilinear(&padded, t, t);
        let std = stats.depth_std.max(MIN_STD);
        depths.slice_mut(s![i, 0, .., ..]).assign(&resized.mapv(|d| {
            if d > 0.0 {
                ((d - stats.depth_mean) / std) as f32
            } else {
                0.0
            }
        }));

        for (k, p) in sample.axis.points.iter().enumerate() {
            let norm = tf.normalize(p);
            axis_points[(i, 2 * k)] = norm[0] as f32;
            axis_points[(i, 2 * k + 1)] = norm[1] as f32;
        }
        let norm = tf.normalize(&sample.gt_2d);
        targets[(i, 0)] = norm[0] as f32;
        targets[(i, 1)] = norm[1] as f32;
        pixel_targets[(i, 0)] = sample.gt_2d.u;
        pixel_targets[(i, 1)] = sample.gt_2d.v;
        ids.push(sample.sample_id.clone());
    }

    Ok(Batch {
        ids,
        images,
        depths,
        axis_points,
        targets,
        pixel_targets,
        transform: tf,
        target_size: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::tiny_sample;
    use approx::assert_abs_diff_eq;

    #[test]
    fn padding_matches_the_published_geometry() {
        // A 920x1224 frame pads to 1224x1224 with a (152, 0) offset.
        let image = Array3::<u8>::from_elem((920, 1224, 3), 7);
        let (padded, tf) = pad_to_square(&image);
        assert_eq!(padded.dim(), (1224, 1224, 3));
        assert_eq!((tf.top, tf.left), (152, 0));
        assert_eq!(padded[(151, 0, 0)], 0);
        assert_eq!(padded[(152, 0, 0)], 7);
        assert_eq!(padded[(152 + 919, 5, 1)], 7);
        assert_eq!(padded[(152 + 920, 5, 1)], 0);

        // Tall images pad on the left/right instead.
        let tall = Array2::<f64>::from_elem((20, 16), 3.0);
        let (padded, tf) = pad_plane_to_square(&tall);
        assert_eq!(padded.dim(), (20, 20));
        assert_eq!((tf.top, tf.left), (0, 2));
        assert_eq!(padded[(0, 1)], 0.0);
        assert_eq!(padded[(0, 2)], 3.0);
    }

    #[test]
    fn coordinate_round_trips_are_exact() {
        let tf = CoordTransform::for_size(920, 1224);
        for &(u, v) in &[(0.0, 0.0), (1223.0, 919.0), (400.25, 333.75)] {
            let p = Point2::new(u, v);
            let norm = tf.normalize(&p);
            assert!(norm.iter().all(|n| (0.0..=1.0).contains(n)));
            let back = tf.denormalize(norm);
            assert_abs_diff_eq!(back.u, u, epsilon = 1e-6);
            assert_abs_diff_eq!(back.v, v, epsilon = 1e-6);

            let resized = tf.to_resized(&p, 256);
            let back = tf.from_resized(&resized, 256);
            assert_abs_diff_eq!(back.u, u, epsilon = 1e-6);
            assert_abs_diff_eq!(back.v, v, epsilon = 1e-6);
        }
    }

    #[test]
    fn bilinear_resize_follows_the_pixel_center_convention() {
        // f(y, x) = x + 10y on a 4x4 grid; shrinking to 2x2 samples the
        // source at 0.5 and 2.5 along each axis.
        let src = Array2::from_shape_fn((4, 4), |(y, x)| x as f64 + 10.0 * y as f64);
        let out = resize_bilinear(&src, 2, 2);
        assert_abs_diff_eq!(out[(0, 0)], 5.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(0, 1)], 7.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(1, 0)], 25.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(1, 1)], 27.5, epsilon = 1e-12);

        // Upsampling a 2x2 ramp clamps at the borders.
        let src = Array2::from_shape_fn((2, 2), |(y, x)| (2 * y + x) as f64);
        let out = resize_bilinear(&src, 4, 4);
        let row0: Vec<f64> = out.row(0).to_vec();
        for (got, want) in row0.iter().zip([0.0, 0.25, 0.75, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }

        // Identity resize is exact.
        let out = resize_bilinear(&src, 2, 2);
        assert_eq!(out, src);
    }

    #[test]
    fn nearest_resize_keeps_masks_binary_and_aligned() {
        // Left half true, right half false.
        let src = Array2::from_shape_fn((8, 8), |(_, x)| x < 4);
        let down = resize_nearest(&src, 4, 4);
        for y in 0..4 {
            assert!(down[(y, 0)] && down[(y, 1)]);
            assert!(!down[(y, 2)] && !down[(y, 3)]);
        }
        let up = resize_nearest(&src, 16, 16);
        for y in 0..16 {
            assert!(up[(y, 0)] && up[(y, 7)]);
            assert!(!up[(y, 8)] && !up[(y, 15)]);
        }
    }

    #[test]
    fn batches_are_deterministic_and_standardized() {
        let a = tiny_sample("a");
        let b = tiny_sample("b");
        let stats = NormStats {
            image_mean: [0.5; 6],
            image_std: [0.25; 6],
            depth_mean: 55.0,
            depth_std: 4.0,
        };
        // Target equal to the padded square keeps the resize an identity,
        // so standardized pixels can be checked by hand.
        let batch = make_batch(&[&a, &b], 20, &stats).unwrap();
        assert_eq!(batch.images.dim(), (2, 6, 20, 20));
        assert_eq!(batch.depths.dim(), (2, 1, 20, 20));
        assert_eq!(batch.axis_points.dim(), (2, 6));
        assert_eq!(batch.ids, ["a", "b"]);
        assert_eq!((batch.transform.top, batch.transform.left), (2, 0));

        // Padding rows standardize as black pixels.
        assert_abs_diff_eq!(batch.images[(0, 0, 0, 0)], -2.0, epsilon = 1e-6);
        let want = ((f64::from(a.left[(3, 4, 1)]) / 255.0 - 0.5) / 0.25) as f32;
        assert_abs_diff_eq!(batch.images[(0, 1, 2 + 3, 4)], want, epsilon = 1e-6);

        // Invalid depth stays zero; valid depth is standardized.
        assert_eq!(batch.depths[(0, 0, 2, 0)], 0.0);
        let want = ((a.depth.data()[(3, 4)] - 55.0) / 4.0) as f32;
        assert_abs_diff_eq!(batch.depths[(0, 0, 2 + 3, 4)], want, epsilon = 1e-6);

        // Targets are the normalized ground truth; raw pixels ride along.
        let norm = batch.transform.normalize(&a.gt_2d);
        assert_abs_diff_eq!(batch.targets[(0, 0)], norm[0] as f32, epsilon = 1e-7);
        assert_abs_diff_eq!(batch.targets[(0, 1)], norm[1] as f32, epsilon = 1e-7);
        assert_eq!(batch.pixel_targets[(0, 0)], a.gt_2d.u);
        assert_eq!(batch.pixel_targets[(0, 1)], a.gt_2d.v);
        assert!(batch.targets.iter().all(|t| (0.0..=1.0).contains(t)));
        assert!(batch.axis_points.iter().all(|t| (0.0..=1.0).contains(t)));

        // Bit-identical across rebuilds.
        let again = make_batch(&[&a, &b], 20, &stats).unwrap();
        assert_eq!(batch.images, again.images);
        assert_eq!(batch.depths, again.depths);
        assert_eq!(batch.axis_points, again.axis_points);
        assert_eq!(batch.targets, again.targets);
    }

    #[test]
    fn mixed_rigs_are_rejected() {
        let a = tiny_sample("a");
        let mut b = tiny_sample("b");
        b.rig.focal_px = 120.0;
        let stats = NormStats {
            image_mean: [0.0; 6],
            image_std: [1.0; 6],
            depth_mean: 0.0,
            depth_std: 1.0,
        };
        let err = make_batch(&[&a, &b], 16, &stats).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");
        assert!(make_batch(&[], 16, &stats).is_err());
    }
}
