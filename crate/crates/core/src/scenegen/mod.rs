//! Synthetic labeled stereo scenes: a cylindrical probe over a textured
//! tissue heightfield.
//!
//! Each sample draws a surface and a probe pose, computes the ground-truth
//! sensing point as the analytic intersection of the probe axis with the
//! surface, and ray-casts both stereo views so the rendered depth, mask,
//! and images agree with that oracle exactly. Poses whose sensing point is
//! hidden, too close to the border, or whose probe is insufficiently
//! visible are rejected and redrawn, up to a fixed budget.

mod cylinder;
mod render;
mod surface;
mod texture;

pub use cylinder::{intersect_cylinder, perpendicular_frame, CylinderHit, ProbePose};
pub use render::{render_view, LightingParams, RenderResult, Scene};
pub use surface::{build_height_field, SurfaceParams};
pub use texture::TissueTexture;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::axis::{extract_axis, AxisSample, ProbeMask, MIN_MASK_PIXELS};
use crate::dataio::{
    save_sample, DatasetManifest, NormStats, SplitLists, StereoSample, MANIFEST_VERSION,
};
use crate::error::{Error, Result};
use crate::geometry::{
    error_3d, project, ray_surface_intersection, vec3, CameraRig, DepthMap, Point3,
};
use crate::seeds::{derive_seed, rng_for};

/// Pose draws per sample before giving up.
pub const MAX_POSE_ATTEMPTS: usize = 100;
/// Minimum camera-frame Z of any probe axis point (mm), keeping the whole
/// body well in front of the camera so projections stay bounded.
const MIN_BODY_Z: f64 = 2.0;
/// Fraction of the image kept as a margin when drawing the aim pixel.
const AIM_MARGIN: f64 = 0.15;
/// Ground truth must stay this many pixels inside the frame.
const GT_MARGIN_PX: f64 = 8.0;
/// Tolerance for the visibility re-check of the ground-truth point (mm),
/// one ray-march step.
const GT_VISIBILITY_TOL_MM: f64 = 0.25;

/// Probe geometry and pose distribution bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    /// Cylinder radius (mm).
    pub radius_mm: f64,
    /// Visible body length behind the tip (mm).
    pub visible_length_mm: f64,
    /// Tip-to-tissue distance range along the axis (mm).
    pub standoff_mm: [f64; 2],
    /// Maximum axis tilt from the optical axis (degrees).
    pub max_tilt_deg: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams {
            radius_mm: 2.25,
            visible_length_mm: 25.0,
            standoff_mm: [10.0, 40.0],
            max_tilt_deg: 60.0,
        }
    }
}

/// Full scene recipe; serialized into the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub rig: CameraRig,
    pub surface: SurfaceParams,
    pub probe: ProbeParams,
    /// Accepted range of the probe's in-frame silhouette fraction.
    pub visible_fraction: [f64; 2],
    /// Master seed of the tissue texture stream.
    pub texture_seed: u64,
    pub lighting: LightingParams,
    /// Axis points sampled into each label.
    pub axis_points: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            rig: CameraRig::new(300.0, 4.5, 300.0, 300.0, [128.0, 128.0], [256, 256])
                .expect("default rig is valid"),
            surface: SurfaceParams::default(),
            probe: ProbeParams::default(),
            visible_fraction: [0.5, 1.0],
            texture_seed: 7,
            lighting: LightingParams::default(),
            axis_points: 50,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        let cfg = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if !(self.surface.base_depth_mm > 0.0) {
            return cfg("surface.base_depth_mm", "must be positive".into());
        }
        if !(self.surface.amplitude_mm >= 0.0) {
            return cfg("surface.amplitude_mm", "must be non-negative".into());
        }
        if !(self.surface.frequency_per_mm > 0.0) {
            return cfg("surface.frequency_per_mm", "must be positive".into());
        }
        if !(0.0..=0.5).contains(&self.surface.max_tilt) {
            return cfg("surface.max_tilt", "must be in [0, 0.5]".into());
        }
        if !(self.probe.radius_mm > 0.0) {
            return cfg("probe.radius_mm", "must be positive".into());
        }
        if !(self.probe.visible_length_mm > 0.0) {
            return cfg("probe.visible_length_mm", "must be positive".into());
        }
        let [lo, hi] = self.probe.standoff_mm;
        if !(lo > 0.0 && hi >= lo) {
            return cfg("probe.standoff_mm", format!("invalid range [{lo}, {hi}]"));
        }
        if !(self.probe.max_tilt_deg > 0.0 && self.probe.max_tilt_deg <= 80.0) {
            return cfg("probe.max_tilt_deg", "must be in (0, 80]".into());
        }
        let [lo, hi] = self.visible_fraction;
        if !(0.5 <= lo && lo <= hi && hi <= 1.0) {
            return cfg(
                "visible_fraction",
                format!("range [{lo}, {hi}] must lie within [0.5, 1.0]"),
            );
        }
        if !(vec3::norm(self.lighting.direction) > 0.0) {
            return cfg("lighting.direction", "must be non-zero".into());
        }
        if !(0.0..=1.0).contains(&self.lighting.ambient) {
            return cfg("lighting.ambient", "must be in [0, 1]".into());
        }
        if self.axis_points == 0 {
            return cfg("axis_points", "must be positive".into());
        }
        Ok(())
    }
}

/// Samples per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Pixel bounding box of the projected probe silhouette, padded and capped.
/// Returns `None` when no silhouette point projects (probe fully behind the
/// near plane; excluded by pose constraints, kept for safety).
fn silhouette_bbox(
    pose: &ProbePose,
    rig: &CameraRig,
    pad: i64,
    cap: Option<(i64, i64, i64, i64)>,
) -> Option<(i64, i64, i64, i64)> {
    let (e1, e2) = perpendicular_frame(pose.axis);
    let (mut u0, mut v0) = (f64::INFINITY, f64::INFINITY);
    let (mut u1, mut v1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let stations = 8;
    let spokes = 16;
    for k in 0..=stations {
        let center = pose.axis_point(pose.visible_length * k as f64 / stations as f64);
        for s in 0..spokes {
            let phi = std::f64::consts::TAU * s as f64 / spokes as f64;
            let offset = vec3::add(
                vec3::scale(e1, pose.radius * phi.cos()),
                vec3::scale(e2, pose.radius * phi.sin()),
            );
            let p = vec3::add(center, offset);
            if p[2] < 0.1 {
                continue;
            }
            let Ok(px) = project(Point3::new(p[0], p[1], p[2]), rig) else {
                continue;
            };
            u0 = u0.min(px.u);
            u1 = u1.max(px.u);
            v0 = v0.min(px.v);
            v1 = v1.max(px.v);
        }
    }
    if !u0.is_finite() {
        return None;
    }
    let mut bbox = (
        u0.floor() as i64 - pad,
        v0.floor() as i64 - pad,
        u1.ceil() as i64 + pad,
        v1.ceil() as i64 + pad,
    );
    if let Some((cu0, cv0, cu1, cv1)) = cap {
        bbox = (bbox.0.max(cu0), bbox.1.max(cv0), bbox.2.min(cu1), bbox.3.min(cv1));
        if bbox.0 > bbox.2 || bbox.1 > bbox.3 {
            return None;
        }
    }
    Some(bbox)
}

/// Estimates the in-frame fraction of the probe's full projected silhouette
/// by casting rays on a regular pixel grid extended beyond the frame.
/// Returns `(fraction, in_frame_count, total_count)` in grid units.
pub fn projected_fraction(pose: &ProbePose, rig: &CameraRig) -> (f64, usize, usize) {
    let (w, h) = (rig.width() as i64, rig.height() as i64);
    let cap = (-4 * w, -4 * h, 5 * w - 1, 5 * h - 1);
    let Some((u0, v0, u1, v1)) = silhouette_bbox(pose, rig, 2, Some(cap)) else {
        return (0.0, 0, 0);
    };
    let area = ((u1 - u0 + 1) * (v1 - v0 + 1)) as f64;
    let stride = ((area / 250_000.0).sqrt().ceil() as i64).max(1);
    let (mut total, mut in_frame) = (0usize, 0usize);
    let mut v = v0;
    while v <= v1 {
        let mut u = u0;
        while u <= u1 {
            let dir = rig.pixel_ray(u as f64, v as f64);
            if intersect_cylinder([0.0, 0.0, 0.0], dir, pose).is_some() {
                total += 1;
                if (0..w).contains(&u) && (0..h).contains(&v) {
                    in_frame += 1;
                }
            }
            u += stride;
        }
        v += stride;
    }
    let fraction = if total == 0 { 0.0 } else { in_frame as f64 / total as f64 };
    (fraction, in_frame, total)
}

/// In-frame probe silhouette (ignoring tissue occlusion), used as a cheap
/// stand-in for the rendered mask while screening poses.
fn cylinder_mask(pose: &ProbePose, rig: &CameraRig) -> Array2<bool> {
    let (h, w) = (rig.height(), rig.width());
    let mut mask = Array2::from_elem((h, w), false);
    let cap = (0, 0, w as i64 - 1, h as i64 - 1);
    let Some((u0, v0, u1, v1)) = silhouette_bbox(pose, rig, 2, Some(cap)) else {
        return mask;
    };
    for v in v0..=v1 {
        for u in u0..=u1 {
            let dir = rig.pixel_ray(u as f64, v as f64);
            if intersect_cylinder([0.0, 0.0, 0.0], dir, pose).is_some() {
                mask[(v as usize, u as usize)] = true;
            }
        }
    }
    mask
}

/// Generates one fully labeled stereo sample. The sample id encodes the
/// seed; dataset assembly renames it per split.
///
/// `inline(never)` pins a single compiled instance of the whole sampling
/// and rendering pipeline: inlining into different call sites can make
/// different floating-point contraction choices, which would break the
/// bit-identical-per-seed guarantee within one binary.
#[inline(never)]
pub fn generate_sample(spec: &SceneSpec, seed: u64) -> Result<StereoSample> {
    spec.validate()?;
    let rig = &spec.rig;
    let field = build_height_field(&spec.surface, rig, &mut rng_for(seed, "surface", 0))?;
    let texture = TissueTexture::new(derive_seed(spec.texture_seed, "texture", seed));
    let camera = Point3::new(0.0, 0.0, 0.0);

    let mut rng = rng_for(seed, "pose", 0);
    let (w, h) = (rig.width() as f64, rig.height() as f64);
    let cos_max = spec.probe.max_tilt_deg.to_radians().cos();
    let min_axis_z = MIN_BODY_Z + spec.probe.radius_mm;

    for _ in 0..MAX_POSE_ATTEMPTS {
        // Draw every pose variable up front so failed attempts consume a
        // fixed slice of the stream.
        let aim_u = rng.random_range(AIM_MARGIN * w..(1.0 - AIM_MARGIN) * w);
        let aim_v = rng.random_range(AIM_MARGIN * h..(1.0 - AIM_MARGIN) * h);
        let cos_tilt = rng.random_range(cos_max..=1.0);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let standoff = rng.random_range(spec.probe.standoff_mm[0]..=spec.probe.standoff_mm[1]);

        // Anchor the probe over a visible tissue point.
        let Ok(anchor) = ray_surface_intersection(camera, rig.pixel_ray(aim_u, aim_v), &field)
        else {
            continue;
        };
        let sin_tilt = (1.0 - cos_tilt * cos_tilt).max(0.0).sqrt();
        let axis = [sin_tilt * phi.cos(), sin_tilt * phi.sin(), cos_tilt];
        let tip = vec3::sub(anchor.to_array(), vec3::scale(axis, standoff));
        let pose = ProbePose {
            tip: Point3::new(tip[0], tip[1], tip[2]),
            axis,
            radius: spec.probe.radius_mm,
            visible_length: spec.probe.visible_length_mm,
        };
        if pose.tip.z <= min_axis_z || pose.base()[2] <= min_axis_z {
            continue;
        }

        // The oracle defines the ground truth: first surface crossing of
        // the axis ray from the tip.
        let Ok(gt_3d) = ray_surface_intersection(pose.tip, axis, &field) else {
            continue;
        };
        let Ok(gt_2d) = project(gt_3d, rig) else {
            continue;
        };
        if gt_2d.u < GT_MARGIN_PX
            || gt_2d.u > w - 1.0 - GT_MARGIN_PX
            || gt_2d.v < GT_MARGIN_PX
            || gt_2d.v > h - 1.0 - GT_MARGIN_PX
        {
            continue;
        }

        // The sensing point must be visible: neither hidden behind a tissue
        // bump nor covered by the probe body.
        let view = rig.pixel_ray(gt_2d.u, gt_2d.v);
        let Ok(seen) = ray_surface_intersection(camera, view, &field) else {
            continue;
        };
        if error_3d(seen, gt_3d) > GT_VISIBILITY_TOL_MM {
            continue;
        }
        let t_seen = seen.z / view[2];
        if let Some(hit) = intersect_cylinder([0.0, 0.0, 0.0], view, &pose) {
            if hit.t < t_seen - 1e-6 {
                continue;
            }
        }

        let (fraction, _, total) = projected_fraction(&pose, rig);
        if total == 0 || fraction < spec.visible_fraction[0] || fraction > spec.visible_fraction[1]
        {
            continue;
        }

        // Cheap screening on the silhouette before paying for the render.
        let silhouette = ProbeMask::new(cylinder_mask(&pose, rig));
        if silhouette.foreground_count() < MIN_MASK_PIXELS
            || extract_axis(&silhouette).is_err()
        {
            continue;
        }

        let scene = Scene {
            field: &field,
            pose: &pose,
            texture: &texture,
            lighting: &spec.lighting,
        };
        let left = render_view(&scene, rig, [0.0, 0.0, 0.0]);
        let right = render_view(&scene, rig, [rig.baseline_mm, 0.0, 0.0]);

        // Re-verify on the true rendered mask (tissue could in principle
        // occlude parts of the silhouette).
        let mask = ProbeMask::new(left.mask);
        if mask.foreground_count() < MIN_MASK_PIXELS {
            continue;
        }
        let axis_seed = derive_seed(seed, "axis", 0);
        let Ok(axis_sample) = AxisSample::from_mask(&mask, spec.axis_points, axis_seed) else {
            continue;
        };
        if mask.data()[(gt_2d.v.round() as usize, gt_2d.u.round() as usize)] {
            continue;
        }

        let sample = StereoSample {
            sample_id: format!("{seed:016x}"),
            left: left.image,
            right: right.image,
            depth: DepthMap::new(left.depth)?,
            mask,
            axis: axis_sample,
            gt_2d,
            gt_3d,
            rig: rig.clone(),
        };
        sample.validate()?;
        return Ok(sample);
    }
    Err(Error::PoseRejected {
        attempts: MAX_POSE_ATTEMPTS,
    })
}

/// Streaming accumulator for the training-split normalization statistics.
#[derive(Default)]
struct StatsAccumulator {
    image_sum: [f64; 6],
    image_sumsq: [f64; 6],
    image_n: f64,
    depth_sum: f64,
    depth_sumsq: f64,
    depth_n: f64,
}

impl StatsAccumulator {
    fn add(&mut self, sample: &StereoSample) {
        for (offset, img) in [(0, &sample.left), (3, &sample.right)] {
            for c in 0..3 {
                for &px in img.slice(ndarray::s![.., .., c]) {
                    let v = f64::from(px) / 255.0;
                    self.image_sum[offset + c] += v;
                    self.image_sumsq[offset + c] += v * v;
                }
            }
            self.image_n += (img.dim().0 * img.dim().1) as f64;
        }
        // Both sides contributed the same pixel count; track one side.
        self.image_n -= (sample.left.dim().0 * sample.left.dim().1) as f64;
        for &d in sample.depth.data() {
            if d > 0.0 {
                self.depth_sum += d;
                self.depth_sumsq += d * d;
                self.depth_n += 1.0;
            }
        }
    }

    fn finalize(&self) -> NormStats {
        let moments = |sum: f64, sumsq: f64, n: f64| -> (f64, f64) {
            if n == 0.0 {
                return (0.0, 1.0);
            }
            let mean = sum / n;
            (mean, (sumsq / n - mean * mean).max(0.0).sqrt())
        };
        let mut stats = NormStats {
            image_mean: [0.0; 6],
            image_std: [1.0; 6],
            depth_mean: 0.0,
            depth_std: 1.0,
        };
        for c in 0..6 {
            let (m, s) = moments(self.image_sum[c], self.image_sumsq[c], self.image_n);
            stats.image_mean[c] = m;
            stats.image_std[c] = s;
        }
        let (m, s) = moments(self.depth_sum, self.depth_sumsq, self.depth_n);
        stats.depth_mean = m;
        stats.depth_std = s;
        stats
    }
}

/// Generates a dataset in the on-disk format: `counts` samples per split
/// with seeds derived from a single global index stream, statistics frozen
/// from the training split, and a manifest at the root.
///
/// `inline(never)` for the same reason as [`generate_sample`]: one compiled
/// instance keeps results identical across call sites.
#[inline(never)]
pub fn generate_dataset(
    spec: &SceneSpec,
    counts: SplitCounts,
    out_dir: &std::path::Path,
    seed: u64,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut splits = SplitLists::default();
    let mut stats = StatsAccumulator::default();
    let mut global = 0u64;
    for (split, count) in [("train", counts.train), ("val", counts.val), ("test", counts.test)] {
        for i in 0..count {
            let sample_seed = derive_seed(seed, "sample", global);
            global += 1;
            let mut sample = generate_sample(spec, sample_seed)?;
            sample.sample_id = format!("{split}_{i:04}");
            if split == "train" {
                stats.add(&sample);
            }
            save_sample(&sample, &DatasetManifest::sample_dir(out_dir, &sample.sample_id))?;
            match split {
                "train" => splits.train.push(sample.sample_id),
                "val" => splits.val.push(sample.sample_id),
                _ => splits.test.push(sample.sample_id),
            }
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION.to_string(),
        seed,
        spec: serde_json::to_value(spec)?,
        rig: spec.rig.clone(),
        splits,
        stats: stats.finalize(),
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{back_project, error_2d, Point2};

    /// Small rig and gentle surface so tests render quickly.
    pub(crate) fn small_spec() -> SceneSpec {
        SceneSpec {
            rig: CameraRig::new(75.0, 4.5, 75.0, 75.0, [32.0, 32.0], [64, 64]).unwrap(),
            ..SceneSpec::default()
        }
    }

    #[test]
    fn axis_aligned_probe_over_a_flat_surface_points_at_the_principal_point() {
        let spec = SceneSpec {
            surface: SurfaceParams {
                amplitude_mm: 0.0,
                max_tilt: 0.0,
                ..SurfaceParams::default()
            },
            ..small_spec()
        };
        let field =
            build_height_field(&spec.surface, &spec.rig, &mut rng_for(0, "surface", 0)).unwrap();
        let tip = Point3::new(0.0, 0.0, 20.0);
        let gt_3d = ray_surface_intersection(tip, [0.0, 0.0, 1.0], &field).unwrap();
        assert!((gt_3d.z - 60.0).abs() < 1e-6);
        let gt_2d = project(gt_3d, &spec.rig).unwrap();
        assert!(error_2d(gt_2d, Point2::new(32.0, 32.0)) < 1e-6);
    }

    #[test]
    fn samples_are_bit_identical_for_a_seed() {
        let spec = small_spec();
        let a = generate_sample(&spec, 11).unwrap();
        let b = generate_sample(&spec, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_sample(&spec, 12).unwrap();
        assert_ne!(a.left, c.left);
    }

    #[test]
    fn ground_truth_is_visible_tissue_with_consistent_depth() {
        let spec = small_spec();
        for seed in 0..4 {
            let s = generate_sample(&spec, seed).unwrap();
            let (u, v) = (s.gt_2d.u.round() as usize, s.gt_2d.v.round() as usize);
            assert!(!s.mask.data()[(v, u)], "seed {seed}: GT on the probe mask");

            // Rendered depth at the GT pixel back-projects close to the
            // analytic 3D ground truth.
            let z = s.depth.get(u, v).expect("GT pixel has valid depth");
            let p = back_project(Point2::new(u as f64, v as f64), z, &s.rig).unwrap();
            assert!(
                error_3d(p, s.gt_3d) < 0.5,
                "seed {seed}: depth-reconstructed GT off by {} mm",
                error_3d(p, s.gt_3d)
            );
        }
    }

    #[test]
    fn rendered_tissue_depth_matches_the_surface_oracle() {
        let spec = small_spec();
        let seed = 2;
        let s = generate_sample(&spec, seed).unwrap();
        let field =
            build_height_field(&spec.surface, &spec.rig, &mut rng_for(seed, "surface", 0)).unwrap();
        let mut checked = 0;
        for v in (0..64).step_by(7) {
            for u in (0..64).step_by(7) {
                if s.mask.data()[(v, u)] {
                    continue;
                }
                let z = s.depth.get(u, v).unwrap();
                let p = back_project(Point2::new(u as f64, v as f64), z, &s.rig).unwrap();
                let h = field.eval(p.x, p.y).expect("tissue point inside extent");
                assert!(
                    (p.z - h).abs() < 0.1,
                    "pixel ({u}, {v}): depth {z} vs surface height {h}"
                );
                checked += 1;
            }
        }
        assert!(checked > 30, "too few tissue pixels checked: {checked}");
    }

    #[test]
    fn stereo_pair_sees_one_consistent_surface() {
        // Fixed scene rendered from both cameras; left-depth points must
        // reproject onto the right camera's depth of the same surface.
        let spec = small_spec();
        let rig = &spec.rig;
        let field =
            build_height_field(&spec.surface, rig, &mut rng_for(5, "surface", 0)).unwrap();
        let texture = TissueTexture::new(3);
        let pose = ProbePose {
            tip: Point3::new(2.0, -1.0, 40.0),
            axis: vec3::normalize([0.2, 0.1, 1.0]),
            radius: 2.25,
            visible_length: 25.0,
        };
        let scene = Scene {
            field: &field,
            pose: &pose,
            texture: &texture,
            lighting: &spec.lighting,
        };
        let left = render_view(&scene, rig, [0.0, 0.0, 0.0]);
        let right = render_view(&scene, rig, [rig.baseline_mm, 0.0, 0.0]);

        let mut checked = 0;
        for v in (2..62).step_by(5) {
            for u in (2..62).step_by(5) {
                if left.mask[(v, u)] {
                    continue;
                }
                let z = left.depth[(v, u)];
                let p = back_project(Point2::new(u as f64, v as f64), z, rig).unwrap();
                // Project into the right camera (origin shifted by the
                // baseline along +X).
                let ur = rig.alpha * (p.x - rig.baseline_mm) / p.z + rig.principal[0];
                let (uri, vri) = (ur.round() as i64, v as i64);
                if !(1..63).contains(&uri) {
                    continue;
                }
                if right.mask[(vri as usize, uri as usize)] {
                    continue;
                }
                // Skip depth discontinuities around the rounding cell.
                let zr = right.depth[(vri as usize, uri as usize)];
                let zn = right.depth[(vri as usize, (uri - 1) as usize)]
                    .max(right.depth[(vri as usize, (uri + 1) as usize)]);
                let zm = right.depth[(vri as usize, (uri - 1) as usize)]
                    .min(right.depth[(vri as usize, (uri + 1) as usize)]);
                if zn - zm > 0.5 {
                    continue;
                }
                // Same surface: camera-frame Z differs only by the sampling
                // offset of the rounded right pixel.
                assert!(
                    (zr - p.z).abs() < 0.25,
                    "pixel ({u}, {v}): left Z {} vs right Z {zr}",
                    p.z
                );
                checked += 1;
            }
        }
        assert!(checked > 30, "too few stereo pixels checked: {checked}");
    }

    #[test]
    fn visible_fraction_and_mask_size_respect_the_spec() {
        let spec = small_spec();
        for seed in [1, 3, 8] {
            let s = generate_sample(&spec, seed).unwrap();
            assert!(s.mask.foreground_count() >= MIN_MASK_PIXELS);

            // Reconstruct the accepted pose's fraction bounds indirectly:
            // the mask must not touch more area than the full silhouette.
            let axis = extract_axis(&s.mask).unwrap();
            let d =
                (s.gt_2d.u - axis.centroid[0]) * axis.direction[1]
                    - (s.gt_2d.v - axis.centroid[1]) * axis.direction[0];
            assert!(
                d.abs() <= 3.0,
                "seed {seed}: GT {} px off the extracted axis line",
                d.abs()
            );
        }
    }

    #[test]
    fn dataset_layout_counts_and_determinism() {
        let spec = small_spec();
        let counts = SplitCounts { train: 3, val: 1, test: 1 };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(&spec, counts, dir_a.path(), 21).unwrap();
        let mb = generate_dataset(&spec, counts, dir_b.path(), 21).unwrap();

        assert_eq!(ma.splits.train.len(), 3);
        assert_eq!(ma.splits.val.len(), 1);
        assert_eq!(ma.splits.test.len(), 1);
        assert_eq!(ma, mb);

        // Sample directories exist and label files are byte-identical.
        for id in ma.splits.all_ids() {
            let la = std::fs::read(DatasetManifest::sample_dir(dir_a.path(), id).join("label.json"))
                .unwrap();
            let lb = std::fs::read(DatasetManifest::sample_dir(dir_b.path(), id).join("label.json"))
                .unwrap();
            assert_eq!(la, lb, "label bytes differ for {id}");
        }

        // Per-sample seeds never collide across splits.
        let seeds: std::collections::HashSet<u64> =
            (0..5).map(|i| derive_seed(21, "sample", i)).collect();
        assert_eq!(seeds.len(), 5);

        // The manifest reloads bit-exactly and the stats describe real data.
        let loaded = DatasetManifest::load(dir_a.path()).unwrap();
        assert_eq!(loaded, ma);
        assert!(loaded.stats.image_std.iter().all(|s| *s > 0.0));
        assert!(loaded.stats.depth_mean > 20.0 && loaded.stats.depth_mean < 100.0);
        assert!(loaded.stats.depth_std > 0.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small_spec();
        spec.visible_fraction = [0.3, 1.0];
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = small_spec();
        spec.probe.standoff_mm = [30.0, 10.0];
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.axis_points = 0;
        assert!(spec.validate().is_err());
    }
}
