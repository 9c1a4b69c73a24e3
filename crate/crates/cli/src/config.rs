//! Three-layer run configuration and provenance records.
//!
//! Every value resolves through the same precedence: command-line flag,
//! then config-file key, then built-in default. The fully resolved
//! configuration is written next to each run's outputs as `run.json`, so a
//! run can be reproduced from that file alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use probesight::geometry::CameraRig;
use probesight::model::{BranchFlags, ModelConfig};
use probesight::scenegen::SceneSpec;
use probesight::training::{LossSpace, TrainConfig};
use serde::{Deserialize, Serialize};

/// Failure class deciding the process exit code: usage mistakes exit 2,
/// internal failures exit 1.
#[derive(Debug)]
pub enum AppError {
    Usage(String),
    Internal(anyhow::Error),
}

pub type AppResult<T> = Result<T, AppError>;

pub fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

impl From<probesight::Error> for AppError {
    fn from(e: probesight::Error) -> Self {
        AppError::Internal(e.into())
    }
}

impl From<anyhow::Error> for AppError {
    fn from(e: anyhow::Error) -> Self {
        AppError::Internal(e)
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Internal(e.into())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::Internal(e.into())
    }
}

/// Keys accepted in the flat JSON config file; unknown keys are rejected
/// to catch typos. Every key has a flag or built-in default counterpart.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub sample: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub target_size: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_final: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub loss_space: Option<String>,
    pub branches: Option<String>,
    pub base_channels: Option<usize>,
    pub block_counts: Option<[usize; 4]>,
    pub ebn_expansion: Option<usize>,
    pub decoder_stages: Option<usize>,
    pub head_hidden: Option<Vec<usize>>,
    pub axis_points: Option<usize>,
    pub train: Option<usize>,
    pub val: Option<usize>,
    pub test: Option<usize>,
    pub image_size: Option<usize>,
    pub focal_px: Option<f64>,
    pub baseline_mm: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> AppResult<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Flag values in config-file shape, merged over a [`FileConfig`].
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub sample: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub target_size: Option<usize>,
    pub branches: Option<String>,
    pub train: Option<usize>,
    pub val: Option<usize>,
    pub test: Option<usize>,
    pub image_size: Option<usize>,
    pub focal_px: Option<f64>,
    pub baseline_mm: Option<f64>,
    pub axis_points: Option<usize>,
}

/// Fully resolved configuration; persisted verbatim in `run.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: String,
    pub checkpoint: Option<PathBuf>,
    pub sample: Option<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub target_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub checkpoint_every: usize,
    pub loss_space: String,
    pub branches: String,
    pub base_channels: usize,
    pub block_counts: [usize; 4],
    pub ebn_expansion: usize,
    pub decoder_stages: usize,
    pub head_hidden: Vec<usize>,
    pub axis_points: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub image_size: usize,
    pub focal_px: f64,
    pub baseline_mm: f64,
}

/// Applies the three-layer precedence and validates enumerated values.
pub fn resolve(file: FileConfig, o: Overrides) -> AppResult<RunConfig> {
    let md = ModelConfig::default();
    let td = TrainConfig::default();
    let rc = RunConfig {
        seed: o.seed.or(file.seed).unwrap_or(0),
        data: o.data.or(file.data),
        out: o.out.or(file.out),
        split: o.split.or(file.split).unwrap_or_else(|| "test".to_string()),
        checkpoint: o.checkpoint.or(file.checkpoint),
        sample: o.sample.or(file.sample),
        epochs: o.epochs.or(file.epochs).unwrap_or(td.epochs),
        batch_size: o.batch_size.or(file.batch_size).unwrap_or(td.batch_size),
        target_size: o.target_size.or(file.target_size).unwrap_or(td.target_size),
        lr_initial: file.lr_initial.unwrap_or(td.lr_initial),
        lr_final: file.lr_final.unwrap_or(td.lr_final),
        checkpoint_every: file.checkpoint_every.unwrap_or(td.checkpoint_every),
        loss_space: file.loss_space.unwrap_or_else(|| "normalized".to_string()),
        branches: o
            .branches
            .or(file.branches)
            .unwrap_or_else(|| "image,depth,axis".to_string()),
        base_channels: file.base_channels.unwrap_or(md.base_channels),
        block_counts: file.block_counts.unwrap_or(md.block_counts),
        ebn_expansion: file.ebn_expansion.unwrap_or(md.ebn_expansion),
        decoder_stages: file.decoder_stages.unwrap_or(md.decoder_stages),
        head_hidden: file.head_hidden.unwrap_or(md.head_hidden),
        axis_points: o.axis_points.or(file.axis_points).unwrap_or(md.axis_points),
        train: o.train.or(file.train).unwrap_or(8),
        val: o.val.or(file.val).unwrap_or(2),
        test: o.test.or(file.test).unwrap_or(2),
        image_size: o.image_size.or(file.image_size).unwrap_or(256),
        focal_px: o.focal_px.or(file.focal_px).unwrap_or(300.0),
        baseline_mm: o.baseline_mm.or(file.baseline_mm).unwrap_or(4.5),
    };
    if !["train", "val", "test"].contains(&rc.split.as_str()) {
        return Err(usage(format!(
            "unknown split '{}' (expected train, val, or test)",
            rc.split
        )));
    }
    rc.loss_space()?;
    rc.branch_flags()?;
    Ok(rc)
}

impl RunConfig {
    pub fn branch_flags(&self) -> AppResult<BranchFlags> {
        let mut flags = BranchFlags { image: false, depth: false, axis: false };
        for part in self.branches.split(',') {
            let slot = match part.trim() {
                "image" => &mut flags.image,
                "depth" => &mut flags.depth,
                "axis" => &mut flags.axis,
                other => {
                    return Err(usage(format!(
                        "unknown branch '{other}' (expected image, depth, axis)"
                    )))
                }
            };
            if *slot {
                return Err(usage(format!("branch '{}' listed twice", part.trim())));
            }
            *slot = true;
        }
        Ok(flags)
    }

    pub fn loss_space(&self) -> AppResult<LossSpace> {
        match self.loss_space.as_str() {
            "normalized" => Ok(LossSpace::Normalized),
            "pixel" => Ok(LossSpace::Pixel),
            other => Err(usage(format!(
                "unknown loss_space '{other}' (expected normalized or pixel)"
            ))),
        }
    }

    pub fn model_config(&self) -> AppResult<ModelConfig> {
        Ok(ModelConfig {
            base_channels: self.base_channels,
            block_counts: self.block_counts,
            ebn_expansion: self.ebn_expansion,
            decoder_stages: self.decoder_stages,
            branches: self.branch_flags()?,
            head_hidden: self.head_hidden.clone(),
            axis_points: self.axis_points,
        })
    }

    pub fn train_config(&self) -> AppResult<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr_initial: self.lr_initial,
            lr_final: self.lr_final,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            target_size: self.target_size,
            loss_space: self.loss_space()?,
        })
    }

    /// Scene description for `gen`: a centered square rig with equal focal
    /// and pixel-scale parameters, everything else at library defaults.
    pub fn scene_spec(&self) -> AppResult<SceneSpec> {
        let s = self.image_size;
        let center = s as f64 / 2.0;
        let rig = CameraRig::new(
            self.focal_px,
            self.baseline_mm,
            self.focal_px,
            self.focal_px,
            [center, center],
            [s, s],
        )
        .map_err(|e| usage(format!("invalid camera parameters: {e}")))?;
        Ok(SceneSpec {
            rig,
            axis_points: self.axis_points,
            ..SceneSpec::default()
        })
    }

    /// The dataset directory, required by data-consuming subcommands.
    pub fn require_data(&self) -> AppResult<PathBuf> {
        self.data
            .clone()
            .ok_or_else(|| usage("--data is required (or set \"data\" in the config file)"))
    }

    /// The output directory, required by output-producing subcommands.
    pub fn require_out(&self) -> AppResult<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| usage("--out is required (or set \"out\" in the config file)"))
    }

    /// The checkpoint path; verified to exist so a wrong path is a usage
    /// error rather than a mid-run failure.
    pub fn require_checkpoint(&self) -> AppResult<PathBuf> {
        let path = self
            .checkpoint
            .clone()
            .ok_or_else(|| usage("--checkpoint is required (or set \"checkpoint\" in the config file)"))?;
        if !path.is_file() {
            return Err(usage(format!("checkpoint {} does not exist", path.display())));
        }
        Ok(path)
    }
}

#[derive(Serialize)]
struct Versions {
    probesight: &'static str,
}

#[derive(Serialize)]
struct Timing {
    started_unix: f64,
    wall_seconds: f64,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config: &'a RunConfig,
    versions: Versions,
    timing: Timing,
}

/// Writes `dir/run.json` describing a completed run.
pub fn write_run_record(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    started: SystemTime,
    wall: Duration,
) -> AppResult<PathBuf> {
    let record = RunRecord {
        command,
        config,
        versions: Versions { probesight: env!("CARGO_PKG_VERSION") },
        timing: Timing {
            started_unix: started
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            wall_seconds: wall.as_secs_f64(),
        },
    };
    fs::create_dir_all(dir)?;
    let path = dir.join("run.json");
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flag_over_file_over_default() {
        let file = FileConfig {
            seed: Some(3),
            epochs: Some(7),
            base_channels: Some(8),
            ..FileConfig::default()
        };
        let o = Overrides { seed: Some(4), ..Overrides::default() };
        let rc = resolve(file, o).unwrap();
        assert_eq!(rc.seed, 4); // flag wins
        assert_eq!(rc.epochs, 7); // file wins
        assert_eq!(rc.batch_size, 8); // default
        assert_eq!(rc.base_channels, 8); // file wins over model default
        assert_eq!(rc.split, "test");
    }

    #[test]
    fn invalid_enumerations_are_usage_errors() {
        let bad_split = Overrides { split: Some("dev".into()), ..Overrides::default() };
        assert!(matches!(
            resolve(FileConfig::default(), bad_split),
            Err(AppError::Usage(_))
        ));

        let bad_branch = Overrides { branches: Some("image,lidar".into()), ..Overrides::default() };
        assert!(matches!(
            resolve(FileConfig::default(), bad_branch),
            Err(AppError::Usage(_))
        ));

        let dup = Overrides { branches: Some("image,image".into()), ..Overrides::default() };
        assert!(matches!(resolve(FileConfig::default(), dup), Err(AppError::Usage(_))));

        let file = FileConfig { loss_space: Some("hinge".into()), ..FileConfig::default() };
        assert!(matches!(
            resolve(file, Overrides::default()),
            Err(AppError::Usage(_))
        ));
    }

    #[test]
    fn branch_list_maps_to_flags() {
        let o = Overrides { branches: Some("image,axis".into()), ..Overrides::default() };
        let rc = resolve(FileConfig::default(), o).unwrap();
        let flags = rc.branch_flags().unwrap();
        assert!(flags.image && !flags.depth && flags.axis);
        let cfg = rc.model_config().unwrap();
        assert_eq!(cfg.branches, flags);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = serde_json::from_str::<FileConfig>("{\"epohcs\": 3}");
        assert!(err.is_err());
    }
}
