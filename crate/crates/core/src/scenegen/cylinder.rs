//! Analytic ray casting against the capped probe cylinder.
//!
//! The probe body occupies the segment from the tip backwards along the
//! axis: points `tip - s * axis` for `s` in `[0, visible_length]`, swept by
//! the radius. Intersections are closed-form (quadratic for the side wall,
//! plane-plus-disc for the caps), so depth and masks are exact.

use crate::geometry::vec3::{self, Vec3};
use crate::geometry::Point3;

/// Minimum ray parameter accepted as a hit, to reject self-intersections at
/// the origin.
const T_MIN: f64 = 1e-9;

/// One cylinder intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderHit {
    /// Ray parameter of the nearest hit.
    pub t: f64,
    /// Outward unit surface normal at the hit point.
    pub normal: Vec3,
    /// True when the hit is on one of the end discs.
    pub cap: bool,
}

/// Probe pose in the left-camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePose {
    /// Sensing tip position (mm).
    pub tip: Point3,
    /// Unit axis direction pointing from the tip towards the tissue.
    pub axis: Vec3,
    /// Cylinder radius (mm).
    pub radius: f64,
    /// Length of probe body behind the tip (mm).
    pub visible_length: f64,
}

impl ProbePose {
    /// Point on the axis at backward offset `s` from the tip.
    pub fn axis_point(&self, s: f64) -> Vec3 {
        vec3::sub(self.tip.to_array(), vec3::scale(self.axis, s))
    }

    /// Far end of the visible body.
    pub fn base(&self) -> Vec3 {
        self.axis_point(self.visible_length)
    }
}

/// Intersects a ray (unit `dir`) with the capped cylinder, returning the
/// nearest hit in front of the origin.
pub fn intersect_cylinder(origin: Vec3, dir: Vec3, pose: &ProbePose) -> Option<CylinderHit> {
    let d = pose.axis;
    let m = vec3::sub(origin, pose.tip.to_array());
    let md = vec3::dot(m, d);
    let rd = vec3::dot(dir, d);
    let mut best: Option<CylinderHit> = None;
    let mut consider = |hit: CylinderHit| {
        if best.map_or(true, |b| hit.t < b.t) {
            best = Some(hit);
        }
    };

    // Side wall: |perpendicular part of (m + t*dir)|^2 = r^2.
    let a = 1.0 - rd * rd;
    let b = vec3::dot(m, dir) - md * rd;
    let c = vec3::dot(m, m) - md * md - pose.radius * pose.radius;
    if a > 1e-12 {
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sqrt = disc.sqrt();
            for t in [(-b - sqrt) / a, (-b + sqrt) / a] {
                if t <= T_MIN {
                    continue;
                }
                // Backward axial offset of the hit from the tip.
                let s = -(md + t * rd);
                if (0.0..=pose.visible_length).contains(&s) {
                    let p = vec3::add(origin, vec3::scale(dir, t));
                    let axis_pt = pose.axis_point(s);
                    let normal = vec3::scale(vec3::sub(p, axis_pt), 1.0 / pose.radius);
                    consider(CylinderHit { t, normal, cap: false });
                    break; // nearer root first; the second can only be farther
                }
            }
        }
    }

    // End caps: discs at s = 0 (tip, outward normal +axis) and
    // s = visible_length (base, outward normal -axis).
    if rd.abs() > 1e-12 {
        for (s_cap, normal) in [(0.0, d), (pose.visible_length, vec3::scale(d, -1.0))] {
            let center = pose.axis_point(s_cap);
            let t = vec3::dot(vec3::sub(center, origin), d) / rd;
            if t <= T_MIN {
                continue;
            }
            let p = vec3::add(origin, vec3::scale(dir, t));
            if vec3::norm(vec3::sub(p, center)) <= pose.radius {
                consider(CylinderHit { t, normal, cap: true });
            }
        }
    }

    best
}

/// Any two unit vectors perpendicular to `d` and to each other.
pub fn perpendicular_frame(d: Vec3) -> (Vec3, Vec3) {
    let anchor = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = vec3::normalize(vec3::sub(anchor, vec3::scale(d, vec3::dot(anchor, d))));
    let e2 = vec3::cross(d, e1);
    (e1, e2)
}
