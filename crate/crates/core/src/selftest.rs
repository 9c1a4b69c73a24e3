//! Built-in oracle suites.
//!
//! Each suite validates one load-bearing piece of the pipeline against an
//! independent oracle: network stage shapes against the declared traces,
//! analytic gradients against finite differences, camera geometry against
//! closed-form round trips, the ray caster against a finer exhaustive
//! march, and axis recovery against masks of known orientation. The suites
//! return structured reports instead of panicking so they can run both
//! under the test harness and from the command line on a fresh checkout.

use std::collections::HashSet;

use ndarray::{Array2, Array4};
use rand::Rng;

use crate::axis::{extract_axis, ProbeMask};
use crate::error::Error;
use crate::geometry::{
    back_project, disparity_to_depth, error_2d, error_3d, project, ray_surface_intersection,
    vec3, CameraRig, HeightField, Point2, Point3, INVALID_DEPTH, MIN_DISPARITY, RAY_MARCH_STEP,
};
use crate::model::{Model, ModelConfig, ModelInputs};
use crate::nn::Params;
use crate::scenegen::{build_height_field, SurfaceParams};
use crate::seeds::rng_for;
use crate::training::batch_loss;

/// One named check inside a suite.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Diagnostic for failures; empty when the check passed.
    pub detail: String,
}

/// Outcome of one oracle suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: &'static str) -> Self {
        SuiteReport { suite, checks: Vec::new() }
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: if passed { String::new() } else { detail.into() },
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One status line, e.g. `PASS  shape audit (58 checks)`.
    pub fn summary(&self) -> String {
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        if failed == 0 {
            format!("PASS  {} ({} checks)", self.suite, self.checks.len())
        } else {
            format!("FAIL  {} ({failed}/{} checks failed)", self.suite, self.checks.len())
        }
    }

    /// The summary line plus one indented line per failed check.
    pub fn render(&self) -> String {
        let mut out = self.summary();
        for c in self.checks.iter().filter(|c| !c.passed) {
            out.push_str(&format!("\n        {}: {}", c.name, c.detail));
        }
        out
    }
}

/// Runs every suite in a fixed order.
pub fn run_all() -> Vec<SuiteReport> {
    vec![
        shape_audit(),
        gradient_check(),
        geometry_round_trips(),
        ray_oracle(),
        pca_axis_recovery(),
    ]
}

/// Audits runtime tensor shapes across the configuration grid
/// {base 8, 16} x {expansion 2, 4} on 64 and 256 pixel inputs against the
/// declared stage traces, pinning the 256 / base 16 / expansion 4 trace to
/// its hand-derived values.
pub fn shape_audit() -> SuiteReport {
    let mut r = SuiteReport::new("shape audit");

    let pinned = ModelConfig { base_channels: 16, ebn_expansion: 4, ..ModelConfig::default() };
    let want = [(16, 128, 128), (64, 64, 64), (256, 32, 32), (1024, 16, 16), (4096, 8, 8)];
    let got = pinned.encoder_stage_specs(256, 256);
    r.check(
        "declared trace for 256 input, base 16, expansion 4",
        got == want,
        format!("got {got:?}, want {want:?}"),
    );

    for base in [8usize, 16] {
        for exp in [2usize, 4] {
            let cfg = ModelConfig {
                base_channels: base,
                ebn_expansion: exp,
                decoder_stages: 2,
                block_counts: [2, 2, 2, 2],
                head_hidden: vec![16],
                axis_points: 10,
                ..ModelConfig::default()
            };
            for hw in [64usize, 256] {
                audit_one(&mut r, &cfg, hw);
            }
        }
    }
    r
}

fn audit_one(r: &mut SuiteReport, cfg: &ModelConfig, hw: usize) {
    let label = format!("base {} exp {} in {hw}", cfg.base_channels, cfg.ebn_expansion);
    let mut model = match Model::<f32>::build(cfg, 0, false) {
        Ok(m) => m,
        Err(e) => {
            r.check(label, false, format!("build failed: {e}"));
            return;
        }
    };
    let n = 2;
    let mut rng = rng_for(0, "selftest-shape", hw as u64);
    let x = Array4::from_shape_simple_fn((n, 6, hw, hw), || rng.random_range(-1.0f32..1.0));

    let image = model.image.as_mut().expect("image branch enabled");
    let maps = image.encoder.forward(&x, false);
    let specs = cfg.encoder_stage_specs(hw, hw);
    for (i, (map, want)) in maps.iter().zip(specs.iter()).enumerate() {
        let (nb, c, h, w) = map.dim();
        r.check(
            format!("{label}: encoder stage {i}"),
            nb == n && (c, h, w) == *want,
            format!("got {:?}, want {:?}", (nb, c, h, w), (n, want.0, want.1, want.2)),
        );
    }

    // The decoder traces for 0, 1, and 2 stages are prefixes of one run,
    // and the feature width is the channel count where the trace stops.
    let shallow = ModelConfig { decoder_stages: 0, ..cfg.clone() };
    r.check(
        format!("{label}: feature width, 0 decoder stages"),
        shallow.image_feature_len() == maps[4].dim().1,
        format!("declared {}, pooled map has {}", shallow.image_feature_len(), maps[4].dim().1),
    );
    let dec_specs = cfg.decoder_stage_specs(hw, hw);
    let mut cur = maps[4].clone();
    for (k, stage) in image.decoder.stages.iter_mut().enumerate() {
        cur = stage.forward(&cur, &maps[cfg.skip_source(k)], false);
        let (nb, c, h, w) = cur.dim();
        r.check(
            format!("{label}: decoder stage {k}"),
            nb == n && (c, h, w) == dec_specs[k],
            format!("got {:?}, want {:?}", (nb, c, h, w), dec_specs[k]),
        );
        let sub = ModelConfig { decoder_stages: k + 1, ..cfg.clone() };
        r.check(
            format!("{label}: feature width, {} decoder stages", k + 1),
            sub.image_feature_len() == c,
            format!("declared {}, stage emits {c} channels", sub.image_feature_len()),
        );
    }

    // Full forward on the small input: fused head emits one (u, v) in the
    // unit square per sample.
    if hw == 64 {
        let inputs = ModelInputs {
            images: Some(x),
            depth: Some(Array4::from_shape_simple_fn((n, 1, hw, hw), || {
                rng.random_range(-1.0f32..1.0)
            })),
            axis: Some(Array2::from_shape_simple_fn((n, 2 * cfg.axis_points), || {
                rng.random_range(0.0f32..1.0)
            })),
        };
        match model.forward(&inputs, false) {
            Ok(y) => {
                let in_range = y.iter().all(|&v| (0.0..=1.0).contains(&v));
                r.check(
                    format!("{label}: head output"),
                    y.dim() == (n, 2) && in_range,
                    format!("shape {:?}, unit range {in_range}", y.dim()),
                );
            }
            Err(e) => r.check(format!("{label}: head output"), false, format!("{e}")),
        }
    }
}

/// Checks analytic gradients of the full three-branch loss against central
/// finite differences in double precision on a tiny configuration.
pub fn gradient_check() -> SuiteReport {
    let mut r = SuiteReport::new("gradient check");
    let cfg = ModelConfig {
        base_channels: 8,
        block_counts: [1, 1, 1, 1],
        ebn_expansion: 2,
        decoder_stages: 1,
        head_hidden: vec![16],
        axis_points: 10,
        ..ModelConfig::default()
    };
    let mut model = match Model::<f64>::build(&cfg, 0, false) {
        Ok(m) => m,
        Err(e) => {
            r.check("build", false, format!("{e}"));
            return r;
        }
    };
    let (n, hw) = (2, 32);
    let mut rng = rng_for(0, "selftest-grad", 0);
    let inputs = ModelInputs {
        images: Some(Array4::from_shape_simple_fn((n, 6, hw, hw), || {
            rng.random_range(-1.0..1.0)
        })),
        depth: Some(Array4::from_shape_simple_fn((n, 1, hw, hw), || {
            rng.random_range(-1.0..1.0)
        })),
        axis: Some(Array2::from_shape_simple_fn((n, 2 * cfg.axis_points), || {
            rng.random_range(0.0..1.0)
        })),
    };
    let targets = Array2::from_shape_simple_fn((n, 2), || rng.random_range(0.2..0.8));

    let loss_of = |m: &mut Model<f64>| -> f64 {
        let pred = m.forward(&inputs, true).expect("inputs validated");
        batch_loss(&pred, &targets).0
    };

    let pred = match model.forward(&inputs, true) {
        Ok(p) => p,
        Err(e) => {
            r.check("forward", false, format!("{e}"));
            return r;
        }
    };
    let (_, gy) = batch_loss(&pred, &targets);
    model.zero_grads();
    model.backward(&inputs, &gy);
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    model.visit_params("", &mut |name, p| {
        names.push(name.to_string());
        analytic.push(p.grad.iter().copied().collect());
    });

    // Sample 200 distinct coordinates across all tensors.
    let sizes: Vec<usize> = analytic.iter().map(|g| g.len()).collect();
    let total: usize = sizes.iter().sum();
    let count = 200.min(total);
    let mut chosen = HashSet::new();
    while chosen.len() < count {
        chosen.insert(rng.random_range(0..total));
    }

    let read_at = |m: &mut Model<f64>, ti: usize, off: usize| -> f64 {
        let mut i = 0;
        let mut out = 0.0;
        m.visit_params("", &mut |_, p| {
            if i == ti {
                out = *p.value.iter().nth(off).expect("offset in range");
            }
            i += 1;
        });
        out
    };
    let write_at = |m: &mut Model<f64>, ti: usize, off: usize, val: f64| {
        let mut i = 0;
        m.visit_params("", &mut |_, p| {
            if i == ti {
                *p.value.iter_mut().nth(off).expect("offset in range") = val;
            }
            i += 1;
        });
    };

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    for flat in chosen {
        let mut ti = 0;
        let mut off = flat;
        while off >= sizes[ti] {
            off -= sizes[ti];
            ti += 1;
        }
        let w0 = read_at(&mut model, ti, off);
        let h = 1e-5 * w0.abs().max(1.0);
        write_at(&mut model, ti, off, w0 + h);
        let fp = loss_of(&mut model);
        write_at(&mut model, ti, off, w0 - h);
        let fm = loss_of(&mut model);
        write_at(&mut model, ti, off, w0);
        let numeric = (fp - fm) / (2.0 * h);
        let exact = analytic[ti][off];
        // The 1e-6 denominator floor keeps finite-difference noise (about
        // 1e-12 on a loss of this scale) from dominating near-zero
        // gradients while still flagging sign or magnitude bugs there.
        let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
            worst = format!("{}[{off}]: analytic {exact:.6e}, numeric {numeric:.6e}", names[ti]);
        }
    }
    r.check(
        format!("max relative error over {count} parameters"),
        max_rel < 1e-4,
        format!("max {max_rel:.3e} at {worst}"),
    );
    r
}

/// Round-trips the camera model and pins the scalar metric oracles.
pub fn geometry_round_trips() -> SuiteReport {
    let mut r = SuiteReport::new("geometry round trips");
    let rigs = [
        CameraRig::new(300.0, 4.5, 300.0, 300.0, [128.0, 128.0], [256, 256]).expect("valid rig"),
        CameraRig::new(150.0, 4.5, 160.0, 140.0, [60.0, 70.0], [128, 144]).expect("valid rig"),
    ];
    let mut rng = rng_for(0, "selftest-geom", 0);

    let mut max_rel = 0.0f64;
    let mut failures = 0usize;
    for i in 0..10_000 {
        let rig = &rigs[i % rigs.len()];
        let p = Point2::new(
            rng.random_range(0.0..(rig.width() - 1) as f64),
            rng.random_range(0.0..(rig.height() - 1) as f64),
        );
        let z = rng.random_range(20.0..200.0);
        match back_project(p, z, rig).and_then(|q| project(q, rig)) {
            Ok(p2) => {
                let rel = error_2d(p, p2) / error_2d(p, Point2::new(0.0, 0.0)).max(1.0);
                max_rel = max_rel.max(rel);
            }
            Err(_) => failures += 1,
        }
    }
    r.check(
        "project/back_project identity over 10000 points",
        failures == 0 && max_rel < 1e-6,
        format!("{failures} failures, max relative deviation {max_rel:.3e}"),
    );

    let rig = &rigs[0];
    let disp = Array2::from_shape_fn((16, 16), |(i, j)| match (i + j) % 3 {
        0 => rng.random_range(0.5..80.0),
        1 => 0.0,
        _ => rng.random_range(0.0..MIN_DISPARITY),
    });
    match disparity_to_depth(&disp, rig) {
        Ok(depth) => {
            let fb = rig.focal_px * rig.baseline_mm;
            let exact = disp.indexed_iter().all(|((i, j), &d)| {
                let want = if d < MIN_DISPARITY { INVALID_DEPTH } else { fb / d };
                depth.data()[[i, j]].to_bits() == want.to_bits()
            });
            r.check(
                "disparity_to_depth matches the scalar oracle exactly",
                exact,
                "at least one pixel differs from f*b/d".to_string(),
            );
        }
        Err(e) => r.check("disparity_to_depth", false, format!("{e}")),
    }

    let five = error_2d(Point2::new(3.0, 4.0), Point2::new(0.0, 0.0));
    let nine = error_3d(Point3::new(2.0, 6.0, 11.0), Point3::new(1.0, 2.0, 3.0));
    r.check("3-4-5 pixel metric", five == 5.0, format!("got {five}"));
    r.check("1-4-8 mm metric", nine == 9.0, format!("got {nine}"));
    let exact = (0..100).all(|_| {
        let a = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let b = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        error_2d(a, b).to_bits() == (a.u - b.u).hypot(a.v - b.v).to_bits()
    });
    r.check(
        "pixel metric matches the scalar oracle exactly",
        exact,
        "at least one pair differs".to_string(),
    );
    r
}

/// Independent fine march plus bisection, used as the ray-caster oracle.
fn march_oracle(origin: Point3, dir: vec3::Vec3, field: &HeightField, step: f64) -> Option<Point3> {
    let o = [origin.x, origin.y, origin.z];
    let f = |t: f64| {
        let p = vec3::add(o, vec3::scale(dir, t));
        field.eval(p[0], p[1]).map(|h| p[2] - h)
    };
    if f(0.0)? >= 0.0 {
        return None;
    }
    let mut t_prev = 0.0;
    for k in 1..=4_000_000u64 {
        let t = k as f64 * step;
        match f(t) {
            None => return None,
            Some(ft) if ft >= 0.0 => {
                let (mut a, mut b) = (t_prev, t);
                for _ in 0..80 {
                    let m = 0.5 * (a + b);
                    match f(m) {
                        Some(fm) if fm >= 0.0 => b = m,
                        Some(_) => a = m,
                        None => break,
                    }
                }
                let tm = 0.5 * (a + b);
                let p = vec3::add(o, vec3::scale(dir, tm));
                return Some(Point3::new(p[0], p[1], p[2]));
            }
            Some(_) => t_prev = t,
        }
    }
    None
}

/// Compares the production ray caster against a ten-times-finer exhaustive
/// march on 100 random sinusoidal surfaces.
pub fn ray_oracle() -> SuiteReport {
    let mut r = SuiteReport::new("ray intersection oracle");
    let rig = CameraRig::new(300.0, 4.5, 300.0, 300.0, [128.0, 128.0], [256, 256])
        .expect("valid rig");
    let mut max_dev = 0.0f64;
    let mut worst = String::new();
    let mut disagreements = 0usize;
    let mut hits = 0usize;
    for i in 0..100u64 {
        let mut rng = rng_for(0, "selftest-ray", i);
        let params = SurfaceParams {
            amplitude_mm: rng.random_range(0.5..5.0),
            frequency_per_mm: rng.random_range(0.02..0.12),
            max_tilt: rng.random_range(0.0..0.3),
            ..SurfaceParams::default()
        };
        let field = match build_height_field(&params, &rig, &mut rng_for(0, "selftest-surface", i))
        {
            Ok(f) => f,
            Err(e) => {
                r.check(format!("scene {i}"), false, format!("surface build failed: {e}"));
                continue;
            }
        };
        let origin = Point3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(20.0..40.0),
        );
        let dir = vec3::normalize([
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            1.0,
        ]);
        let production = ray_surface_intersection(origin, dir, &field);
        let oracle = march_oracle(origin, dir, &field, RAY_MARCH_STEP / 10.0);
        match (production, oracle) {
            (Ok(p), Some(q)) => {
                hits += 1;
                let dev = error_3d(p, q);
                if dev > max_dev {
                    max_dev = dev;
                    worst = format!("scene {i}");
                }
            }
            (Err(Error::NoIntersection), None) => {}
            (p, q) => {
                disagreements += 1;
                r.check(
                    format!("scene {i} agreement"),
                    false,
                    format!("production {p:?}, oracle hit = {}", q.is_some()),
                );
            }
        }
    }
    r.check(
        format!("max deviation over {hits} intersections"),
        disagreements == 0 && hits > 50 && max_dev < 1e-3,
        format!("max {max_dev:.3e} mm at {worst}; {disagreements} disagreements, {hits} hits"),
    );
    r
}

/// Recovers known axis angles from synthetic elongated masks and requires
/// the ambiguity error on a disc.
pub fn pca_axis_recovery() -> SuiteReport {
    let mut r = SuiteReport::new("axis recovery");
    let (h, w) = (200usize, 200usize);
    let (cu, cv) = (100.0, 100.0);
    for theta_deg in [0.0f64, 15.0, 30.0, 45.0, 60.0, 75.0] {
        let (sin, cos) = theta_deg.to_radians().sin_cos();
        let data = Array2::from_shape_fn((h, w), |(v, u)| {
            let (du, dv) = (u as f64 - cu, v as f64 - cv);
            let along = du * cos + dv * sin;
            let across = -du * sin + dv * cos;
            along.abs() <= 60.0 && across.abs() <= 6.0
        });
        match extract_axis(&ProbeMask::new(data)) {
            Ok(axis) => {
                let got = axis.direction[1].atan2(axis.direction[0]).to_degrees();
                let diff = ((got - theta_deg + 90.0).rem_euclid(180.0) - 90.0).abs();
                r.check(
                    format!("rectangle at {theta_deg} degrees"),
                    diff <= 1.0,
                    format!("recovered {got:.3} degrees ({diff:.3} off)"),
                );
            }
            Err(e) => r.check(format!("rectangle at {theta_deg} degrees"), false, format!("{e}")),
        }
    }

    let disc = Array2::from_shape_fn((h, w), |(v, u)| {
        let (du, dv) = (u as f64 - cu, v as f64 - cv);
        du * du + dv * dv <= 40.0 * 40.0
    });
    let outcome = extract_axis(&ProbeMask::new(disc));
    r.check(
        "disc raises the ambiguous-axis error",
        matches!(outcome, Err(Error::AmbiguousAxis { .. })),
        format!("got {outcome:?}"),
    );
    r
}
