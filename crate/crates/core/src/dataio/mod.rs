//! On-disk dataset format, loading, and batch assembly.
//!
//! A dataset is a directory with `manifest.json` at the root and one
//! directory per sample under `samples/<id>/` holding `left.png`,
//! `right.png`, `depth.pfm`, `mask.png`, and `label.json`. The manifest
//! records the generator spec, the split membership, the camera rig, and
//! the training-split normalization statistics, so batches built from it
//! are deterministic.

mod batch;
pub mod pfm;

pub use batch::{
    make_batch, pad_plane_to_square, pad_to_square, resize_bilinear, resize_nearest, Batch,
    CoordTransform,
};
pub use pfm::{read_pfm, write_pfm};

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::axis::{AxisSample, ProbeMask};
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, DepthMap, Point2, Point3};

/// Current manifest format version.
pub const MANIFEST_VERSION: &str = "1";

/// One labeled stereo datum.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample {
    pub sample_id: String,
    /// Left RGB image, `[H, W, 3]`.
    pub left: Array3<u8>,
    /// Right RGB image, `[H, W, 3]`.
    pub right: Array3<u8>,
    /// Left-camera depth in mm, 0 marking invalid pixels.
    pub depth: DepthMap,
    /// Left-camera probe mask.
    pub mask: ProbeMask,
    pub axis: AxisSample,
    /// Ground-truth sensing point in left-image pixels.
    pub gt_2d: Point2,
    /// Ground-truth sensing point in left-camera millimetres.
    pub gt_3d: Point3,
    pub rig: CameraRig,
}

impl StereoSample {
    pub fn height(&self) -> usize {
        self.left.dim().0
    }

    pub fn width(&self) -> usize {
        self.left.dim().1
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.rig.height(), self.rig.width());
        let fields: [(&str, (usize, usize)); 4] = [
            ("left", (self.left.dim().0, self.left.dim().1)),
            ("right", (self.right.dim().0, self.right.dim().1)),
            ("depth", self.depth.data().dim()),
            ("mask", (self.mask.height(), self.mask.width())),
        ];
        for (name, dim) in fields {
            if dim != (h, w) {
                return Err(Error::validation(
                    name,
                    format!("expected {h}x{w}, got {}x{}", dim.0, dim.1),
                ));
            }
        }
        let inside = |p: &Point2| {
            p.u.is_finite()
                && p.v.is_finite()
                && (0.0..w as f64).contains(&p.u)
                && (0.0..h as f64).contains(&p.v)
        };
        if !inside(&self.gt_2d) {
            return Err(Error::validation(
                "gt_2d",
                format!("({}, {}) outside {h}x{w} image", self.gt_2d.u, self.gt_2d.v),
            ));
        }
        if !(self.gt_3d.z > 0.0) || !self.gt_3d.z.is_finite() {
            return Err(Error::validation(
                "gt_3d",
                format!("Z must be positive, got {}", self.gt_3d.z),
            ));
        }
        let dn = (self.axis.direction[0].powi(2) + self.axis.direction[1].powi(2)).sqrt();
        if (dn - 1.0).abs() > 1e-6 {
            return Err(Error::validation(
                "axis_direction",
                format!("must be unit length, norm {dn}"),
            ));
        }
        if self.axis.points.is_empty() || !self.axis.points.iter().all(inside) {
            return Err(Error::validation(
                "axis_points",
                "points must be non-empty and inside the image".to_string(),
            ));
        }
        Ok(())
    }
}

/// On-disk label record.
#[derive(Serialize, Deserialize)]
struct Label {
    u: f64,
    v: f64,
    #[serde(rename = "X")]
    x: f64,
    #[serde(rename = "Y")]
    y: f64,
    #[serde(rename = "Z")]
    z: f64,
    axis_points: Vec<[f64; 2]>,
    axis_direction: [f64; 2],
    axis_centroid: [f64; 2],
    rig: CameraRig,
}

fn rgb_to_array(img: image::RgbImage) -> Array3<u8> {
    let (w, h) = img.dimensions();
    Array3::from_shape_vec((h as usize, w as usize, 3), img.into_raw())
        .expect("RgbImage raw buffer is row-major RGB")
}

pub(crate) fn array_to_rgb(a: &Array3<u8>) -> image::RgbImage {
    let (h, w, c) = a.dim();
    assert_eq!(c, 3, "expected an RGB array");
    let raw = a
        .as_standard_layout()
        .as_slice()
        .expect("standard layout")
        .to_vec();
    image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from dimensions")
}

fn open_image(dir: &Path, name: &str) -> Result<image::DynamicImage> {
    image::open(dir.join(name)).map_err(|e| Error::format(name, e.to_string()))
}

/// Writes the five per-sample files into `dir` (created if missing).
pub fn save_sample(sample: &StereoSample, dir: &Path) -> Result<()> {
    sample.validate()?;
    std::fs::create_dir_all(dir)?;
    array_to_rgb(&sample.left).save(dir.join("left.png"))?;
    array_to_rgb(&sample.right).save(dir.join("right.png"))?;
    write_pfm(&dir.join("depth.pfm"), sample.depth.data())?;

    let (h, w) = (sample.mask.height(), sample.mask.width());
    let mut mask = image::GrayImage::new(w as u32, h as u32);
    for ((v, u), &fg) in sample.mask.data().indexed_iter() {
        mask.put_pixel(u as u32, v as u32, image::Luma([if fg { 255 } else { 0 }]));
    }
    mask.save(dir.join("mask.png"))?;

    let label = Label {
        u: sample.gt_2d.u,
        v: sample.gt_2d.v,
        x: sample.gt_3d.x,
        y: sample.gt_3d.y,
        z: sample.gt_3d.z,
        axis_points: sample.axis.points.iter().map(|p| [p.u, p.v]).collect(),
        axis_direction: sample.axis.direction,
        axis_centroid: sample.axis.centroid,
        rig: sample.rig.clone(),
    };
    std::fs::write(
        dir.join("label.json"),
        serde_json::to_vec_pretty(&label)?,
    )?;
    Ok(())
}

/// Loads and validates one sample directory; the directory name becomes the
/// sample id.
pub fn load_sample(dir: &Path) -> Result<StereoSample> {
    let sample_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::format("sample dir", "path has no directory name"))?;

    let label_bytes = std::fs::read(dir.join("label.json"))
        .map_err(|e| Error::format("label.json", e.to_string()))?;
    let label: Label = serde_json::from_slice(&label_bytes)
        .map_err(|e| Error::format("label.json", e.to_string()))?;
    label.rig.validate()?;

    let left = rgb_to_array(open_image(dir, "left.png")?.into_rgb8());
    let right = rgb_to_array(open_image(dir, "right.png")?.into_rgb8());
    let depth = DepthMap::new(read_pfm(&dir.join("depth.pfm"))?)
        .map_err(|e| Error::format("depth.pfm", e.to_string()))?;

    let mask_img = open_image(dir, "mask.png")?.into_luma8();
    let (mw, mh) = mask_img.dimensions();
    let mask_arr = Array2::from_shape_vec((mh as usize, mw as usize), mask_img.into_raw())
        .expect("GrayImage raw buffer is row-major");
    let mask = ProbeMask::from_luma(&mask_arr);

    let sample = StereoSample {
        sample_id,
        left,
        right,
        depth,
        mask,
        axis: AxisSample {
            points: label
                .axis_points
                .iter()
                .map(|&[u, v]| Point2::new(u, v))
                .collect(),
            direction: label.axis_direction,
            centroid: label.axis_centroid,
        },
        gt_2d: Point2::new(label.u, label.v),
        gt_3d: Point3::new(label.x, label.y, label.z),
        rig: label.rig,
    };
    sample.validate()?;
    Ok(sample)
}

/// Per-channel standardization statistics frozen from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Mean of each of the six stacked image channels, in [0,1] units.
    pub image_mean: [f64; 6],
    /// Population standard deviation of each image channel.
    pub image_std: [f64; 6],
    /// Mean of valid depth values in mm.
    pub depth_mean: f64,
    /// Population standard deviation of valid depth values.
    pub depth_std: f64,
}

/// Sample ids per split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitLists {
    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Contract(format!(
                "unknown split {other:?}, expected train, val, or test"
            ))),
        }
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Dataset root record: generator provenance, splits, rig, statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub seed: u64,
    /// Snapshot of the generator spec, kept opaque so externally produced
    /// datasets can carry their own provenance.
    pub spec: serde_json::Value,
    pub rig: CameraRig,
    pub splits: SplitLists,
    pub stats: NormStats,
}

impl DatasetManifest {
    pub fn path(root: &Path) -> PathBuf {
        root.join("manifest.json")
    }

    pub fn sample_dir(root: &Path, id: &str) -> PathBuf {
        root.join("samples").join(id)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root)?;
        std::fs::write(Self::path(root), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Loads the manifest and checks that every listed sample id resolves
    /// to a directory.
    pub fn load(root: &Path) -> Result<Self> {
        let bytes = std::fs::read(Self::path(root))
            .map_err(|e| Error::format("manifest.json", e.to_string()))?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::format("manifest.json", e.to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::format(
                "manifest.json",
                format!(
                    "unsupported version {:?}, expected {MANIFEST_VERSION:?}",
                    manifest.version
                ),
            ));
        }
        manifest.rig.validate()?;
        for id in manifest.splits.all_ids() {
            let dir = Self::sample_dir(root, id);
            if !dir.is_dir() {
                return Err(Error::validation(
                    "splits",
                    format!("sample {id:?} has no directory at {}", dir.display()),
                ));
            }
        }
        Ok(manifest)
    }

    /// Loads every sample of a split, in manifest order.
    pub fn load_split(&self, root: &Path, split: &str) -> Result<Vec<StereoSample>> {
        self.splits
            .get(split)?
            .iter()
            .map(|id| load_sample(&Self::sample_dir(root, id)))
            .collect()
    }
}
