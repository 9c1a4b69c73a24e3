//! Stereo camera model and 2D/3D geometry.
//!
//! Conventions:
//!
//! * The left camera is the world origin, looking down +Z; +X points right,
//!   +Y points down (image row direction). The right camera sits at
//!   `(baseline, 0, 0)` with identical orientation (rectified pair).
//! * Pixel coordinates are `(u, v)` = (column, row); depth maps are indexed
//!   `[row, column]`. Distances are millimetres, image coordinates pixels.
//! * Depth value `0.0` is the invalid-depth sentinel.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disparities below this are treated as unmatched and map to invalid depth.
pub const MIN_DISPARITY: f64 = 1e-6;
/// Invalid-depth sentinel stored in depth maps.
pub const INVALID_DEPTH: f64 = 0.0;
/// Coarse step of the ray/heightfield march, in mm.
pub const RAY_MARCH_STEP: f64 = 0.25;
/// Bisection refines the bracketed crossing until |f| falls below this (mm).
pub const RAY_TOL: f64 = 1e-6;

/// 2D image point in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub fn new(u: f64, v: f64) -> Self {
        Point2 { u, v }
    }
}

/// 3D point in the left-camera frame, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Euclidean distance between two image points, in pixels.
pub fn error_2d(a: Point2, b: Point2) -> f64 {
    (a.u - b.u).hypot(a.v - b.v)
}

/// Euclidean distance between two 3D points, in mm.
pub fn error_3d(a: Point3, b: Point3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Small 3-vector helpers used by ray casting; kept local on purpose, the
/// crate's vector algebra needs are too thin to justify a linear-algebra
/// dependency.
pub mod vec3 {
    pub type Vec3 = [f64; 3];

    pub fn add(a: Vec3, b: Vec3) -> Vec3 {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    pub fn scale(a: Vec3, s: f64) -> Vec3 {
        [a[0] * s, a[1] * s, a[2] * s]
    }

    pub fn dot(a: Vec3, b: Vec3) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    pub fn norm(a: Vec3) -> f64 {
        dot(a, a).sqrt()
    }

    pub fn normalize(a: Vec3) -> Vec3 {
        let n = norm(a);
        scale(a, 1.0 / n)
    }
}

/// Rectified stereo rig intrinsics and geometry.
///
/// `alpha`/`beta` are the horizontal/vertical focal lengths in pixels used
/// for projection; `focal_px` is the focal length used in the disparity
/// relation `Z = focal_px * baseline / disparity`. For square pixels these
/// coincide, but they are kept separate so imported calibrations round-trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    /// Focal length in pixels entering the disparity relation.
    pub focal_px: f64,
    /// Stereo baseline in mm.
    pub baseline_mm: f64,
    /// Horizontal focal length in pixels.
    pub alpha: f64,
    /// Vertical focal length in pixels.
    pub beta: f64,
    /// Principal point `(o_x, o_y)` in pixels.
    pub principal: [f64; 2],
    /// Image size `[height, width]` in pixels.
    pub image_size: [usize; 2],
}

impl CameraRig {
    pub fn new(
        focal_px: f64,
        baseline_mm: f64,
        alpha: f64,
        beta: f64,
        principal: [f64; 2],
        image_size: [usize; 2],
    ) -> Result<Self> {
        let rig = CameraRig {
            focal_px,
            baseline_mm,
            alpha,
            beta,
            principal,
            image_size,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("focal_px", self.focal_px),
            ("baseline_mm", self.baseline_mm),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, value) in pos {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if !self.principal.iter().all(|p| p.is_finite()) {
            return Err(Error::Config("principal point must be finite".into()));
        }
        if self.image_size.iter().any(|&d| d == 0) {
            return Err(Error::Config("image_size must be non-zero".into()));
        }
        let [o_x, o_y] = self.principal;
        if !(0.0 <= o_x && o_x < self.width() as f64) || !(0.0 <= o_y && o_y < self.height() as f64)
        {
            return Err(Error::Config(format!(
                "principal point ({o_x}, {o_y}) must lie inside the {}x{} image",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.image_size[0]
    }

    pub fn width(&self) -> usize {
        self.image_size[1]
    }

    /// Unit direction of the left-camera ray through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> vec3::Vec3 {
        vec3::normalize([
            (u - self.principal[0]) / self.alpha,
            (v - self.principal[1]) / self.beta,
            1.0,
        ])
    }
}

/// Dense per-pixel depth in mm, `0.0` marking invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    data: Array2<f64>,
}

impl DepthMap {
    /// Wraps a `[height, width]` array. Negative or non-finite entries are
    /// rejected; exact zeros are the invalid sentinel.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some(bad) = data.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::validation(
                "depth",
                format!("depth values must be finite and non-negative, got {bad}"),
            ));
        }
        Ok(DepthMap { data })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Depth at integer pixel, `None` when invalid or out of bounds.
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let d = *self.data.get((v, u))?;
        (d > 0.0).then_some(d)
    }

    /// Depth under a sub-pixel point using nearest-pixel rounding
    /// (`f64::round`, halves away from zero).
    pub fn at_rounded(&self, p: Point2) -> Result<f64> {
        let (h, w) = (self.height(), self.width());
        let (ur, vr) = (p.u.round(), p.v.round());
        if ur < 0.0 || vr < 0.0 || ur >= w as f64 || vr >= h as f64 {
            return Err(Error::OutOfBounds {
                u: p.u,
                v: p.v,
                width: w,
                height: h,
            });
        }
        let (u, v) = (ur as usize, vr as usize);
        self.get(u, v).ok_or(Error::MissingDepth { u, v })
    }
}

/// Converts a disparity map (pixels) to depth (mm) via `Z = f * b / d`.
/// Disparities below [`MIN_DISPARITY`] produce the invalid sentinel.
pub fn disparity_to_depth(disparity: &Array2<f64>, rig: &CameraRig) -> Result<DepthMap> {
    let fb = rig.focal_px * rig.baseline_mm;
    let data = disparity.mapv(|d| if d < MIN_DISPARITY { INVALID_DEPTH } else { fb / d });
    DepthMap::new(data)
}

/// Back-projects pixel `p` at known depth `z` (mm) into the camera frame.
pub fn back_project(p: Point2, z: f64, rig: &CameraRig) -> Result<Point3> {
    if !(z > 0.0) {
        return Err(Error::Contract(format!(
            "back_project requires positive depth, got {z}"
        )));
    }
    Ok(Point3 {
        x: (p.u - rig.principal[0]) * z / rig.alpha,
        y: (p.v - rig.principal[1]) * z / rig.beta,
        z,
    })
}

/// Back-projects pixel `p` using the depth map value under its nearest pixel.
pub fn back_project_depth(p: Point2, depth: &DepthMap, rig: &CameraRig) -> Result<Point3> {
    let z = depth.at_rounded(p)?;
    back_project(p, z, rig)
}

/// Projects a camera-frame point (mm) to pixel coordinates.
pub fn project(q: Point3, rig: &CameraRig) -> Result<Point2> {
    if !(q.z > 0.0) {
        return Err(Error::Contract(format!(
            "project requires positive Z, got {}",
            q.z
        )));
    }
    Ok(Point2 {
        u: rig.alpha * q.x / q.z + rig.principal[0],
        v: rig.beta * q.y / q.z + rig.principal[1],
    })
}

/// Tissue surface as a heightfield `z = h(x, y)` over a rectangular extent,
/// bilinearly interpolated between grid nodes. Grid rows index `y`, columns
/// index `x`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeightField {
    heights: Array2<f64>,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl HeightField {
    pub fn new(heights: Array2<f64>, x_range: (f64, f64), y_range: (f64, f64)) -> Result<Self> {
        if heights.nrows() < 2 || heights.ncols() < 2 {
            return Err(Error::Config("heightfield grid must be at least 2x2".into()));
        }
        if !(x_range.1 > x_range.0) || !(y_range.1 > y_range.0) {
            return Err(Error::Config("heightfield extent must be non-empty".into()));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::Config("heightfield values must be finite".into()));
        }
        Ok(HeightField {
            heights,
            x_min: x_range.0,
            x_max: x_range.1,
            y_min: y_range.0,
            y_max: y_range.1,
        })
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    /// Min and max height over the grid nodes; bilinear interpolation cannot
    /// leave this interval.
    pub fn z_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &h in &self.heights {
            lo = lo.min(h);
            hi = hi.max(h);
        }
        (lo, hi)
    }

    fn grid_coords(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        let nx = self.heights.ncols();
        let ny = self.heights.nrows();
        let fx = (x - self.x_min) / (self.x_max - self.x_min) * (nx - 1) as f64;
        let fy = (y - self.y_min) / (self.y_max - self.y_min) * (ny - 1) as f64;
        if fx < 0.0 || fy < 0.0 || fx > (nx - 1) as f64 || fy > (ny - 1) as f64 {
            return None;
        }
        let i = (fx as usize).min(nx - 2);
        let j = (fy as usize).min(ny - 2);
        Some((i, j, fx - i as f64, fy - j as f64))
    }

    /// Bilinear height at `(x, y)`, `None` outside the extent.
    pub fn eval(&self, x: f64, y: f64) -> Option<f64> {
        let (i, j, tx, ty) = self.grid_coords(x, y)?;
        let h = &self.heights;
        let h00 = h[(j, i)];
        let h10 = h[(j, i + 1)];
        let h01 = h[(j + 1, i)];
        let h11 = h[(j + 1, i + 1)];
        Some(h00 * (1.0 - tx) * (1.0 - ty) + h10 * tx * (1.0 - ty) + h01 * (1.0 - tx) * ty + h11 * tx * ty)
    }

    /// Analytic gradient `(dh/dx, dh/dy)` of the bilinear patch at `(x, y)`.
    pub fn gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let (i, j, tx, ty) = self.grid_coords(x, y)?;
        let h = &self.heights;
        let h00 = h[(j, i)];
        let h10 = h[(j, i + 1)];
        let h01 = h[(j + 1, i)];
        let h11 = h[(j + 1, i + 1)];
        let cell_dx = (self.x_max - self.x_min) / (self.heights.ncols() - 1) as f64;
        let cell_dy = (self.y_max - self.y_min) / (self.heights.nrows() - 1) as f64;
        let dhdx = ((h10 - h00) * (1.0 - ty) + (h11 - h01) * ty) / cell_dx;
        let dhdy = ((h01 - h00) * (1.0 - tx) + (h11 - h10) * tx) / cell_dy;
        Some((dhdx, dhdy))
    }
}

/// Parametric range of `t >= 0` for which `origin + t*dir` stays inside a
/// slab `lo <= value <= hi` along one coordinate.
fn slab(origin: f64, dir: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if dir.abs() < 1e-15 {
        return (origin >= lo && origin <= hi).then_some((0.0, f64::INFINITY));
    }
    let (t0, t1) = ((lo - origin) / dir, (hi - origin) / dir);
    let (t0, t1) = (t0.min(t1), t0.max(t1));
    (t1 >= 0.0).then_some((t0.max(0.0), t1))
}

/// First crossing of a ray (unit `dir`, from above) with the surface.
///
/// Marches `f(t) = p(t).z - h(p(t).x, p(t).y)` in [`RAY_MARCH_STEP`] steps
/// inside the surface bounding volume looking for a sign change from
/// negative (above the surface) to non-negative, then bisects the bracket
/// until `|f| <` [`RAY_TOL`].
pub fn ray_surface_intersection(
    origin: Point3,
    dir: vec3::Vec3,
    surface: &HeightField,
) -> Result<Point3> {
    let n = vec3::norm(dir);
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "ray direction must be unit length, |dir| = {n}"
        )));
    }
    let o = [origin.x, origin.y, origin.z];
    let (zmin, zmax) = surface.z_range();
    let margin = 4.0 * RAY_MARCH_STEP;
    let (x0, x1) = surface.x_range();
    let (y0, y1) = surface.y_range();
    let range = slab(o[0], dir[0], x0, x1)
        .zip(slab(o[1], dir[1], y0, y1))
        .zip(slab(o[2], dir[2], zmin - margin, zmax + margin))
        .map(|(((ax0, ax1), (ay0, ay1)), (az0, az1))| (ax0.max(ay0).max(az0), ax1.min(ay1).min(az1)));
    let Some((t_enter, t_exit)) = range.filter(|(a, b)| a <= b) else {
        return Err(Error::NoIntersection);
    };

    let f = |t: f64| -> Option<f64> {
        let p = vec3::add(o, vec3::scale(dir, t));
        surface.eval(p[0], p[1]).map(|h| p[2] - h)
    };

    let mut t_prev = t_enter;
    let Some(mut f_prev) = f(t_prev) else {
        return Err(Error::NoIntersection);
    };
    if f_prev >= 0.0 {
        // The ray enters the bounding volume already at or below the surface;
        // there is no visible crossing from above.
        return Err(Error::NoIntersection);
    }
    let steps = ((t_exit - t_enter) / RAY_MARCH_STEP).ceil() as usize;
    let mut bracket = None;
    for k in 1..=steps {
        let t = (t_enter + k as f64 * RAY_MARCH_STEP).min(t_exit);
        match f(t) {
            Some(ft) if ft >= 0.0 => {
                bracket = Some((t_prev, t, f_prev, ft));
                break;
            }
            Some(ft) => {
                t_prev = t;
                f_prev = ft;
            }
            // Marched out of the lateral extent: the ray left the surface
            // footprint without crossing.
            None => return Err(Error::NoIntersection),
        }
    }
    let Some((mut a, mut b, _fa, mut fb)) = bracket else {
        return Err(Error::NoIntersection);
    };

    let mut t_hit = if fb == 0.0 { b } else { 0.5 * (a + b) };
    for _ in 0..128 {
        t_hit = 0.5 * (a + b);
        let Some(fm) = f(t_hit) else { break };
        if fm.abs() < RAY_TOL || (b - a) < 1e-13 {
            break;
        }
        if fm < 0.0 {
            a = t_hit;
        } else {
            b = t_hit;
            fb = fm;
        }
    }
    let _ = fb;
    let p = vec3::add(o, vec3::scale(dir, t_hit));
    Ok(Point3::new(p[0], p[1], p[2]))
}
