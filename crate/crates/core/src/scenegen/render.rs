//! Per-pixel ray-cast rendering of one camera view.
//!
//! Every pixel casts a ray against the probe cylinder (closed form) and the
//! tissue heightfield (marched oracle); the nearer hit wins. Shading is
//! Lambertian with a procedural texture on the tissue. Depth stores the
//! camera-frame Z of the nearest hit so the depth map and the geometry
//! oracles agree exactly.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::geometry::vec3::{self, Vec3};
use crate::geometry::{ray_surface_intersection, CameraRig, HeightField, Point3, INVALID_DEPTH};
use crate::scenegen::cylinder::{intersect_cylinder, ProbePose};
use crate::scenegen::texture::TissueTexture;

/// Base tissue albedo before texture modulation.
const TISSUE_ALBEDO: [f64; 3] = [0.80, 0.45, 0.40];
/// Brushed-steel probe albedo.
const PROBE_ALBEDO: [f64; 3] = [0.55, 0.58, 0.60];
/// Darkening factor for the probe end caps.
const CAP_FACTOR: f64 = 0.85;
/// Background for rays that miss everything (never happens in-frustum with a
/// full-coverage surface, kept for safety).
const BACKGROUND: [f64; 3] = [0.02, 0.02, 0.03];

/// Directional light plus ambient floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingParams {
    /// Propagation direction of the light (need not be unit length). The
    /// default shines from the camera area into the scene.
    pub direction: [f64; 3],
    /// Ambient fraction in [0, 1].
    pub ambient: f64,
}

impl Default for LightingParams {
    fn default() -> Self {
        LightingParams {
            direction: [0.4, 0.3, 1.0],
            ambient: 0.35,
        }
    }
}

/// One rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    /// `[H, W, 3]` RGB image.
    pub image: Array3<u8>,
    /// `[H, W]` camera-frame Z of the nearest hit (mm), 0 where nothing was
    /// hit.
    pub depth: Array2<f64>,
    /// `[H, W]` true where the nearest hit is the probe.
    pub mask: Array2<bool>,
}

/// Everything needed to shade one scene.
pub struct Scene<'a> {
    pub field: &'a HeightField,
    pub pose: &'a ProbePose,
    pub texture: &'a TissueTexture,
    pub lighting: &'a LightingParams,
}

fn lambert(normal: Vec3, to_light: Vec3, ambient: f64) -> f64 {
    let diffuse = vec3::dot(normal, to_light).max(0.0);
    ambient + (1.0 - ambient) * diffuse
}

fn quantize(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
}

/// Renders the scene from a camera at `origin` sharing the rig orientation.
pub fn render_view(scene: &Scene, rig: &CameraRig, origin: Vec3) -> RenderResult {
    let (h, w) = (rig.height(), rig.width());
    let mut image = Array3::zeros((h, w, 3));
    let mut depth = Array2::from_elem((h, w), INVALID_DEPTH);
    let mut mask = Array2::from_elem((h, w), false);
    let to_light = vec3::scale(vec3::normalize(scene.lighting.direction), -1.0);
    let origin_pt = Point3::new(origin[0], origin[1], origin[2]);

    for v in 0..h {
        for u in 0..w {
            let dir = rig.pixel_ray(u as f64, v as f64);
            let cyl = intersect_cylinder(origin, dir, scene.pose);
            let surf = ray_surface_intersection(origin_pt, dir, scene.field).ok();
            let t_surf = surf.map(|p| (p.z - origin[2]) / dir[2]);

            let probe_first = match (cyl, t_surf) {
                (Some(c), Some(ts)) => c.t < ts,
                (Some(_), None) => true,
                (None, _) => false,
            };
            let color = if probe_first {
                let hit = cyl.unwrap();
                mask[(v, u)] = true;
                depth[(v, u)] = origin[2] + hit.t * dir[2];
                let shade = lambert(hit.normal, to_light, scene.lighting.ambient);
                let factor = if hit.cap { CAP_FACTOR } else { 1.0 };
                PROBE_ALBEDO.map(|a| a * factor * shade)
            } else if let Some(p) = surf {
                depth[(v, u)] = p.z;
                let (gx, gy) = scene
                    .field
                    .gradient(p.x, p.y)
                    .expect("intersection point lies inside the field extent");
                // Camera-facing surface normal of z = h(x, y).
                let normal = vec3::normalize([gx, gy, -1.0]);
                let shade = lambert(normal, to_light, scene.lighting.ambient);
                let tex = 0.75 + 0.5 * scene.texture.eval(p.x, p.y);
                TISSUE_ALBEDO.map(|a| (a * tex).min(1.0) * shade)
            } else {
                BACKGROUND
            };
            let [r, g, b] = quantize(color);
            image[(v, u, 0)] = r;
            image[(v, u, 1)] = g;
            image[(v, u, 2)] = b;
        }
    }
    RenderResult { image, depth, mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;

    fn flat_scene_parts() -> (HeightField, ProbePose, TissueTexture, LightingParams, CameraRig) {
        let rig = CameraRig::new(75.0, 4.5, 75.0, 75.0, [32.0, 32.0], [64, 64]).unwrap();
        let params = crate::scenegen::surface::SurfaceParams {
            amplitude_mm: 0.0,
            max_tilt: 0.0,
            ..Default::default()
        };
        let field =
            crate::scenegen::surface::build_height_field(&params, &rig, &mut rng_for(1, "surface", 0))
                .unwrap();
        let pose = ProbePose {
            tip: Point3::new(0.0, 0.0, 40.0),
            axis: [0.0, 0.0, 1.0],
            radius: 2.25,
            visible_length: 25.0,
        };
        (field, pose, TissueTexture::new(7), LightingParams::default(), rig)
    }

    #[test]
    fn depth_and_mask_separate_probe_from_tissue() {
        let (field, pose, texture, lighting, rig) = flat_scene_parts();
        let scene = Scene {
            field: &field,
            pose: &pose,
            texture: &texture,
            lighting: &lighting,
        };
        let out = render_view(&scene, &rig, [0.0, 0.0, 0.0]);

        // The principal pixel looks straight down the probe axis: it sees
        // the base cap at z = 15.
        assert!(out.mask[(32, 32)]);
        assert!((out.depth[(32, 32)] - 15.0).abs() < 1e-9);

        // A corner pixel sees the flat tissue at z = 60: depth along the
        // ray is still the camera-frame Z.
        assert!(!out.mask[(0, 0)]);
        assert!((out.depth[(0, 0)] - 60.0).abs() < 1e-6);

        // Every pixel hits something in this scene.
        assert!(out.depth.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn probe_pixels_look_like_steel_and_tissue_like_tissue() {
        let (field, pose, texture, lighting, rig) = flat_scene_parts();
        let scene = Scene {
            field: &field,
            pose: &pose,
            texture: &texture,
            lighting: &lighting,
        };
        let out = render_view(&scene, &rig, [0.0, 0.0, 0.0]);
        // Tissue is redder than blue; steel is slightly blue-grey.
        let (v, u) = (0, 0);
        assert!(out.image[(v, u, 0)] > out.image[(v, u, 2)]);
        let (v, u) = (32, 32);
        assert!(out.image[(v, u, 2)] >= out.image[(v, u, 0)]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let (field, pose, texture, lighting, rig) = flat_scene_parts();
        let scene = Scene {
            field: &field,
            pose: &pose,
            texture: &texture,
            lighting: &lighting,
        };
        let a = render_view(&scene, &rig, [0.0, 0.0, 0.0]);
        let b = render_view(&scene, &rig, [0.0, 0.0, 0.0]);
        assert_eq!(a, b);
    }
}
