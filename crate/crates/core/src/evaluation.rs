//! Aggregate error metrics, prediction overlays, and report comparison.
//!
//! [`evaluate`] runs a trained model over a split and produces an
//! [`EvalReport`]: one row per sample plus mean / standard deviation /
//! median aggregates of the 2D pixel error and the 3D millimetre error.
//! 3D points come from back-projecting each pixel through its own
//! depth-map value; rows where either point lacks valid depth are flagged
//! and excluded from the 3D aggregates (the exclusion count is reported).
//! Standard deviations are population standard deviations; the convention
//! is recorded in the report header.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::dataio::{array_to_rgb, make_batch, NormStats, StereoSample};
use crate::error::{Error, Result};
use crate::geometry::{back_project_depth, error_2d, error_3d, Point2};
use crate::model::{Model, ModelInputs};

/// Radius of the overlay dots, in pixels.
pub const OVERLAY_RADIUS: usize = 5;
/// Ground-truth dot color (red).
const GT_COLOR: [u8; 3] = [255, 0, 0];
/// Prediction dot color (green).
const PRED_COLOR: [u8; 3] = [0, 255, 0];

/// Mean, population standard deviation, and median of an error list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

/// Aggregates a list of values; `None` when the list is empty. The median
/// of an even count is the mean of the two middle values.
pub fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    Some(Aggregate {
        mean,
        std: var.sqrt(),
        median,
    })
}

/// Per-sample evaluation row. 2D errors use the raw (unclamped) prediction;
/// `clamped` records that the prediction fell outside the image rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub sample_id: String,
    /// Prediction in original-resolution pixels.
    pub pred_2d: [f64; 2],
    pub gt_2d: [f64; 2],
    pub err_2d_px: f64,
    /// Prediction back-projected through its own depth-map value (mm).
    pub pred_3d: Option<[f64; 3]>,
    /// Ground truth back-projected through its own depth-map value (mm).
    pub gt_3d: Option<[f64; 3]>,
    pub err_3d_mm: Option<f64>,
    /// Either point had no valid depth; the row is excluded from 3D
    /// aggregates.
    pub depth_missing: bool,
    pub clamped: bool,
}

/// Evaluation results for one split, rows ordered by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    /// Standard-deviation convention of the aggregates; always
    /// "population".
    pub std_convention: String,
    pub rows: Vec<SampleEval>,
    pub agg_2d: Aggregate,
    /// `None` when every row was excluded for missing depth.
    pub agg_3d: Option<Aggregate>,
    /// Rows excluded from the 3D aggregates.
    pub excluded_3d: usize,
    /// Snapshot of the configuration that produced the report.
    pub config: serde_json::Value,
}

/// One metric's change between two reports, as `100 * (b - a) / a`
/// (negative = improvement for error metrics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub percent_change: f64,
}

/// Evaluates one sample given its prediction in original-resolution
/// pixels. `err_2d_px` is [`error_2d`] applied to the same points.
pub fn eval_row(sample: &StereoSample, pred_px: Point2) -> SampleEval {
    let (h, w) = (sample.height() as f64, sample.width() as f64);
    let clamped =
        pred_px.u < 0.0 || pred_px.v < 0.0 || pred_px.u > w - 1.0 || pred_px.v > h - 1.0;
    let pred_3d = back_project_depth(pred_px, &sample.depth, &sample.rig).ok();
    let gt_3d = back_project_depth(sample.gt_2d, &sample.depth, &sample.rig).ok();
    let err_3d_mm = match (pred_3d, gt_3d) {
        (Some(p), Some(g)) => Some(error_3d(p, g)),
        _ => None,
    };
    SampleEval {
        sample_id: sample.sample_id.clone(),
        pred_2d: [pred_px.u, pred_px.v],
        gt_2d: [sample.gt_2d.u, sample.gt_2d.v],
        err_2d_px: error_2d(pred_px, sample.gt_2d),
        pred_3d: pred_3d.map(|p| [p.x, p.y, p.z]),
        gt_3d: gt_3d.map(|g| [g.x, g.y, g.z]),
        err_3d_mm,
        depth_missing: err_3d_mm.is_none(),
        clamped,
    }
}

/// Assembles a report from per-sample rows (already ordered).
pub fn build_report(
    split: &str,
    rows: Vec<SampleEval>,
    config: serde_json::Value,
) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Contract("cannot build a report from zero rows".into()));
    }
    let errs_2d: Vec<f64> = rows.iter().map(|r| r.err_2d_px).collect();
    let errs_3d: Vec<f64> = rows.iter().filter_map(|r| r.err_3d_mm).collect();
    Ok(EvalReport {
        split: split.to_string(),
        std_convention: "population".to_string(),
        agg_2d: aggregate(&errs_2d).expect("rows are non-empty"),
        agg_3d: aggregate(&errs_3d),
        excluded_3d: rows.len() - errs_3d.len(),
        rows,
        config,
    })
}

/// Runs inference over `samples` and builds the report, rows ordered by
/// sample id. Predictions are denormalized to original-resolution pixels
/// by inverting the batch coordinate transform.
#[inline(never)]
pub fn evaluate(
    model: &mut Model<f32>,
    samples: &[StereoSample],
    split: &str,
    stats: &NormStats,
    target_size: usize,
    batch_size: usize,
    config: serde_json::Value,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Contract(format!("split {split} is empty")));
    }
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].sample_id.cmp(&samples[b].sample_id));

    let mut rows = Vec::with_capacity(samples.len());
    for chunk in order.chunks(batch_size) {
        let refs: Vec<&StereoSample> = chunk.iter().map(|&i| &samples[i]).collect();
        let batch = make_batch(&refs, target_size, stats)?;
        let transform = batch.transform;
        let inputs = ModelInputs {
            images: Some(batch.images),
            depth: Some(batch.depths),
            axis: Some(batch.axis_points),
        };
        let pred = model.forward(&inputs, false)?;
        for (k, &i) in chunk.iter().enumerate() {
            let norm = [f64::from(pred[[k, 0]]), f64::from(pred[[k, 1]])];
            rows.push(eval_row(&samples[i], transform.denormalize(norm)));
        }
    }
    build_report(split, rows, config)
}

/// Draws a filled dot, clipping at the image border.
fn draw_dot(img: &mut Array3<u8>, center: Point2, color: [u8; 3]) {
    let (h, w, _) = img.dim();
    let (cu, cv) = (center.u.round() as i64, center.v.round() as i64);
    let r = OVERLAY_RADIUS as i64;
    for dv in -r..=r {
        for du in -r..=r {
            if du * du + dv * dv > r * r {
                continue;
            }
            let (v, u) = (cv + dv, cu + du);
            if v >= 0 && u >= 0 && (v as usize) < h && (u as usize) < w {
                for (c, value) in color.iter().enumerate() {
                    img[(v as usize, u as usize, c)] = *value;
                }
            }
        }
    }
}

/// Left image with a red ground-truth dot and a green prediction dot.
/// Out-of-bounds predictions are clamped to the image rectangle; the flag
/// reports whether clamping happened.
pub fn render_overlay(sample: &StereoSample, pred_2d: Point2) -> (Array3<u8>, bool) {
    let (h, w) = (sample.height() as f64, sample.width() as f64);
    let clamped =
        pred_2d.u < 0.0 || pred_2d.v < 0.0 || pred_2d.u > w - 1.0 || pred_2d.v > h - 1.0;
    let pred = Point2::new(pred_2d.u.clamp(0.0, w - 1.0), pred_2d.v.clamp(0.0, h - 1.0));
    let mut img = sample.left.clone();
    draw_dot(&mut img, sample.gt_2d, GT_COLOR);
    draw_dot(&mut img, pred, PRED_COLOR);
    (img, clamped)
}

/// Renders the report as a text table mirroring the aggregate columns.
pub fn report_table(report: &EvalReport) -> String {
    let mut out = format!(
        "split: {}   samples: {}   3D-excluded (missing depth): {}   std: {}\n",
        report.split,
        report.rows.len(),
        report.excluded_3d,
        report.std_convention
    );
    out.push_str(&format!(
        "{:<10} {:>10} {:>10} {:>10}\n",
        "metric", "mean", "std", "median"
    ));
    let a = &report.agg_2d;
    out.push_str(&format!(
        "{:<10} {:>10.3} {:>10.3} {:>10.3}\n",
        "2D (px)", a.mean, a.std, a.median
    ));
    match &report.agg_3d {
        Some(a) => out.push_str(&format!(
            "{:<10} {:>10.3} {:>10.3} {:>10.3}\n",
            "3D (mm)", a.mean, a.std, a.median
        )),
        None => out.push_str(&format!("{:<10} {:>32}\n", "3D (mm)", "no rows with valid depth")),
    }
    out
}

/// Writes `report.json` and `report.txt` under `dir`.
pub fn save_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    fs::write(dir.join("report.txt"), report_table(report))?;
    Ok(())
}

/// Writes one overlay PNG per report row under `dir/overlays/<id>.png`.
/// Every row must have a matching sample.
pub fn save_overlays(samples: &[StereoSample], report: &EvalReport, dir: &Path) -> Result<()> {
    let overlays = dir.join("overlays");
    fs::create_dir_all(&overlays)?;
    for row in &report.rows {
        let sample = samples
            .iter()
            .find(|s| s.sample_id == row.sample_id)
            .ok_or_else(|| {
                Error::Contract(format!("no sample for report row {}", row.sample_id))
            })?;
        let (img, _) = render_overlay(sample, Point2::new(row.pred_2d[0], row.pred_2d[1]));
        array_to_rgb(&img)
            .save(overlays.join(format!("{}.png", row.sample_id)))
            .map_err(Error::from)?;
    }
    Ok(())
}

fn delta(metric: &str, a: f64, b: f64) -> MetricDelta {
    let percent_change = if a == 0.0 {
        if b == 0.0 {
            0.0
        } else {
            f64::NAN
        }
    } else {
        100.0 * (b - a) / a
    };
    MetricDelta {
        metric: metric.to_string(),
        a,
        b,
        percent_change,
    }
}

/// Per-metric percentage change from report `a` to report `b`,
/// `100 * (b - a) / a`. 3D rows appear only when both reports have 3D
/// aggregates.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Vec<MetricDelta>> {
    if a.split != b.split {
        return Err(Error::Contract(format!(
            "cannot compare reports over different splits: {} vs {}",
            a.split, b.split
        )));
    }
    let mut out = vec![
        delta("2d_mean_px", a.agg_2d.mean, b.agg_2d.mean),
        delta("2d_std_px", a.agg_2d.std, b.agg_2d.std),
        delta("2d_median_px", a.agg_2d.median, b.agg_2d.median),
    ];
    if let (Some(a3), Some(b3)) = (&a.agg_3d, &b.agg_3d) {
        out.push(delta("3d_mean_mm", a3.mean, b3.mean));
        out.push(delta("3d_std_mm", a3.std, b3.std));
        out.push(delta("3d_median_mm", a3.median, b3.median));
    }
    Ok(out)
}

/// Renders comparison rows as a text table.
pub fn delta_table(deltas: &[MetricDelta]) -> String {
    let mut out = format!(
        "{:<14} {:>12} {:>12} {:>10}\n",
        "metric", "a", "b", "change %"
    );
    for d in deltas {
        out.push_str(&format!(
            "{:<14} {:>12.3} {:>12.3} {:>+10.2}\n",
            d.metric, d.a, d.b, d.percent_change
        ));
    }
    out
}
