//! Loss, learning-rate schedule, training loop, checkpointing, and the
//! overfit probe.
//!
//! The loss is the squared Euclidean distance between the predicted and
//! ground-truth coordinates, averaged over the batch. It is computed in
//! normalized units by default; the squared distance is scale-covariant,
//! so the minimizer is unchanged, and a pixel-space switch exists for
//! literal fidelity. Learning rate decays linearly across epochs. Epoch
//! shuffles draw from per-epoch seed streams, so a resumed run replays
//! exactly the batches an uninterrupted run would have seen.
//!
//! The training entry points are `#[inline(never)]`: floating-point
//! contraction is chosen per call site after inlining, and pinning one
//! codegen instance keeps results independent of the caller.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::{make_batch, CoordTransform, DatasetManifest, NormStats, StereoSample};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::geometry::{error_2d, Point2};
use crate::model::{Model, ModelConfig, ModelInputs};
use crate::nn::{Adam, Element, Params};
use crate::seeds::rng_for;

/// Checkpoint file magic.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSIGHT01";

/// Coordinate space the loss is computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    /// Targets in [0,1] after padding normalization (default).
    #[default]
    Normalized,
    /// Targets in original-resolution pixels.
    Pixel,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate at epoch 0.
    pub lr_initial: f64,
    /// Learning rate at the final epoch (linear decay between).
    pub lr_final: f64,
    pub seed: u64,
    /// Also write a numbered checkpoint every this many epochs; 0 disables
    /// (best and last checkpoints are always written).
    pub checkpoint_every: usize,
    /// Square side the batches are resized to.
    pub target_size: usize,
    pub loss_space: LossSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 50,
            lr_initial: 1e-4,
            lr_final: 8e-5,
            seed: 0,
            checkpoint_every: 0,
            target_size: 256,
            loss_space: LossSpace::Normalized,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return Err(Error::Config(format!(
                "lr_initial must be positive, got {}",
                self.lr_initial
            )));
        }
        if !(self.lr_final.is_finite() && self.lr_final > 0.0) {
            return Err(Error::Config(format!(
                "lr_final must be positive, got {}",
                self.lr_final
            )));
        }
        if self.lr_final > self.lr_initial {
            return Err(Error::Config(format!(
                "lr_final {} exceeds lr_initial {}",
                self.lr_final, self.lr_initial
            )));
        }
        if self.target_size == 0 {
            return Err(Error::Config("target_size must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate at `epoch`: linear from `lr_initial` (epoch 0) to
/// `lr_final` (final epoch).
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.lr_initial;
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * t
}

/// Linear decay over optimizer steps, used by the overfit probe.
fn lr_at_step(cfg: &TrainConfig, step: usize, steps: usize) -> f64 {
    if steps <= 1 {
        return cfg.lr_initial;
    }
    let t = step as f64 / (steps - 1) as f64;
    cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * t
}

/// Squared Euclidean distance between a prediction and its target.
pub fn loss(pred: Point2, gt: Point2) -> f64 {
    let (du, dv) = (pred.u - gt.u, pred.v - gt.v);
    du * du + dv * dv
}

/// Mean squared-distance loss over a batch and its gradient with respect
/// to the predictions (`2 * (pred - target) / n`).
pub fn batch_loss<T: Element>(pred: &Array2<T>, target: &Array2<T>) -> (T, Array2<T>) {
    assert_eq!(pred.dim(), target.dim(), "prediction/target shape mismatch");
    let n = pred.dim().0;
    assert!(n > 0, "empty batch");
    let inv_n = T::from_f64(1.0 / n as f64);
    let diff = pred - target;
    let total = diff.iter().fold(T::zero(), |acc, d| acc + *d * *d);
    let grad = diff.mapv(|d| T::from_f64(2.0) * d * inv_n);
    (total * inv_n, grad)
}

/// Loss and gradient with respect to the normalized prediction, in the
/// configured loss space. Pixel-space loss maps the prediction through the
/// affine unpadding transform, whose scale factors into the gradient.
fn loss_and_grad(
    pred: &Array2<f32>,
    targets_norm: &Array2<f32>,
    targets_px: &Array2<f64>,
    transform: CoordTransform,
    space: LossSpace,
) -> (f64, Array2<f32>) {
    match space {
        LossSpace::Normalized => {
            let (l, g) = batch_loss(pred, targets_norm);
            (f64::from(l), g)
        }
        LossSpace::Pixel => {
            let s = transform.square as f32;
            let (left, top) = (transform.left as f32, transform.top as f32);
            let pred_px = Array2::from_shape_fn(pred.dim(), |(i, j)| {
                pred[[i, j]] * s - if j == 0 { left } else { top }
            });
            let tgt = targets_px.mapv(|v| v as f32);
            let (l, g_px) = batch_loss(&pred_px, &tgt);
            (f64::from(l), g_px.mapv(|g| g * s))
        }
    }
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Mean validation 2D error in original-resolution pixels.
    pub val_2d_mean: f64,
    /// Mean validation 3D error in mm; absent when no row had valid depth.
    pub val_3d_mean: Option<f64>,
    /// Epoch duration in seconds (not covered by determinism guarantees).
    pub wall_time: f64,
}

/// Result of a [`train`] run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub log_path: PathBuf,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    /// Best validation 2D mean error seen (pixels).
    pub best_val_error_2d: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorKind {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
}

/// JSON header of a checkpoint: the manifest of every serialized tensor
/// (name, kind, shape, in blob order) plus run bookkeeping.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    dtype: String,
    config: ModelConfig,
    seed: u64,
    /// Completed epochs at save time.
    epoch: usize,
    best_val_error_2d: Option<f64>,
    adam_t: u64,
    tensors: Vec<TensorEntry>,
}

fn dtype_name<T: Element>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

fn push_elems<T: Element>(out: &mut Vec<u8>, arr: &ArrayD<T>) {
    if std::mem::size_of::<T>() == 4 {
        for &x in arr.iter() {
            out.extend_from_slice(&(Element::to_f64(x) as f32).to_le_bytes());
        }
    } else {
        for &x in arr.iter() {
            out.extend_from_slice(&Element::to_f64(x).to_le_bytes());
        }
    }
}

fn read_elems<T: Element>(
    bytes: &[u8],
    pos: &mut usize,
    shape: &[usize],
    what: &str,
) -> Result<ArrayD<T>> {
    let numel: usize = shape.iter().product();
    let width = std::mem::size_of::<T>();
    let need = numel * width;
    let end = pos
        .checked_add(need)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(what, "tensor data extends past end of file"))?;
    let mut data = Vec::with_capacity(numel);
    for chunk in bytes[*pos..end].chunks_exact(width) {
        let v = if width == 4 {
            f64::from(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")))
        } else {
            f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"))
        };
        data.push(T::from_f64(v));
    }
    *pos = end;
    ArrayD::from_shape_vec(IxDyn(shape), data)
        .map_err(|e| Error::format(what, format!("bad tensor shape: {e}")))
}

/// Serializes the model weights, batch-norm running statistics, optimizer
/// moments, and run bookkeeping: magic, little-endian JSON-header length,
/// JSON header, then raw little-endian tensor blobs in header order.
pub fn save_checkpoint<T: Element>(
    path: &Path,
    model: &mut Model<T>,
    adam: &Adam<T>,
    seed: u64,
    epoch: usize,
    best_val_error_2d: Option<f64>,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blobs = Vec::new();
    model.visit_params("", &mut |name, p| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            kind: TensorKind::Param,
            shape: p.value.shape().to_vec(),
        });
        push_elems(&mut blobs, &p.value);
    });
    model.visit_buffers("", &mut |name, b| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            kind: TensorKind::Buffer,
            shape: b.shape().to_vec(),
        });
        push_elems(&mut blobs, b);
    });
    for (name, m, v) in adam.moments(&model.param_names()) {
        tensors.push(TensorEntry {
            name: name.clone(),
            kind: TensorKind::AdamM,
            shape: m.shape().to_vec(),
        });
        push_elems(&mut blobs, m);
        tensors.push(TensorEntry {
            name,
            kind: TensorKind::AdamV,
            shape: v.shape().to_vec(),
        });
        push_elems(&mut blobs, v);
    }

    let header = CheckpointHeader {
        version: 1,
        dtype: dtype_name::<T>().to_string(),
        config: model.cfg.clone(),
        seed,
        epoch,
        best_val_error_2d,
        adam_t: adam.t,
        tensors,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_json.len() + blobs.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&blobs);
    fs::write(path, out)?;
    Ok(())
}

/// A deserialized checkpoint: the rebuilt model, restored optimizer, and
/// run bookkeeping.
pub struct LoadedCheckpoint<T: Element> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub best_val_error_2d: Option<f64>,
}

/// Loads a checkpoint saved by [`save_checkpoint`]. Every model tensor
/// must be present with its expected shape, and the stored dtype must
/// match `T`.
pub fn load_checkpoint<T: Element>(path: &Path) -> Result<LoadedCheckpoint<T>> {
    let what = path.display().to_string();
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(&what, "not a checkpoint file (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16 + header_len;
    if body > bytes.len() {
        return Err(Error::format(&what, "header length exceeds file size"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body])
        .map_err(|e| Error::format(&what, format!("bad header: {e}")))?;
    if header.version != 1 {
        return Err(Error::format(
            &what,
            format!("unsupported checkpoint version {}", header.version),
        ));
    }
    if header.dtype != dtype_name::<T>() {
        return Err(Error::format(
            &what,
            format!("dtype mismatch: file has {}, loading as {}", header.dtype, dtype_name::<T>()),
        ));
    }

    let mut pos = body;
    let mut params = std::collections::HashMap::new();
    let mut buffers = std::collections::HashMap::new();
    let mut moments_m = std::collections::HashMap::new();
    let mut moments_v = std::collections::HashMap::new();
    for entry in &header.tensors {
        let arr = read_elems::<T>(&bytes, &mut pos, &entry.shape, &what)?;
        let slot = match entry.kind {
            TensorKind::Param => &mut params,
            TensorKind::Buffer => &mut buffers,
            TensorKind::AdamM => &mut moments_m,
            TensorKind::AdamV => &mut moments_v,
        };
        if slot.insert(entry.name.clone(), arr).is_some() {
            return Err(Error::format(&what, format!("duplicate tensor {}", entry.name)));
        }
    }
    if pos != bytes.len() {
        return Err(Error::format(&what, "trailing bytes after tensor data"));
    }

    let mut model = Model::<T>::build(&header.config, header.seed, false)?;
    let mut problems: Vec<String> = Vec::new();
    model.visit_params("", &mut |name, p| match params.remove(name) {
        Some(v) if v.raw_dim() == p.value.raw_dim() => p.value = v,
        Some(v) => problems.push(format!(
            "{name}: shape {:?} in file, expected {:?}",
            v.shape(),
            p.value.shape()
        )),
        None => problems.push(format!("{name}: missing from checkpoint")),
    });
    model.visit_buffers("", &mut |name, b| match buffers.remove(name) {
        Some(v) if v.raw_dim() == b.raw_dim() => *b = v,
        Some(v) => problems.push(format!(
            "{name}: shape {:?} in file, expected {:?}",
            v.shape(),
            b.shape()
        )),
        None => problems.push(format!("{name}: missing from checkpoint")),
    });
    for name in params.keys().chain(buffers.keys()) {
        problems.push(format!("{name}: not a tensor of this model"));
    }
    if let Some(msg) = problems.first() {
        return Err(Error::format(&what, msg.clone()));
    }

    let mut adam = Adam::new();
    if !moments_m.is_empty() || !moments_v.is_empty() {
        let mut state = Vec::new();
        for name in model.param_names() {
            let (Some(m), Some(v)) = (moments_m.remove(&name), moments_v.remove(&name)) else {
                return Err(Error::format(
                    &what,
                    format!("{name}: incomplete optimizer moments"),
                ));
            };
            state.push((name, m, v));
        }
        if !moments_m.is_empty() || !moments_v.is_empty() {
            return Err(Error::format(&what, "optimizer moments for unknown tensors"));
        }
        adam.restore(header.adam_t, state);
    } else {
        adam.restore(header.adam_t, Vec::new());
    }

    Ok(LoadedCheckpoint {
        model,
        adam,
        config: header.config,
        seed: header.seed,
        epoch: header.epoch,
        best_val_error_2d: header.best_val_error_2d,
    })
}

fn adam_step(model: &mut Model<f32>, adam: &mut Adam<f32>, lr: f64) {
    adam.begin_step();
    let lr = lr as f32;
    model.visit_params("", &mut |name, p| adam.update(name, p, lr));
}

/// Trains on the manifest's train split, validating on the val split each
/// epoch. Writes `epochs.jsonl`, `best.ckpt` (lowest validation 2D mean
/// error), and `last.ckpt` under `out_dir`; `resume_from` continues an
/// interrupted run and reproduces the uninterrupted loss sequence exactly.
#[inline(never)]
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data_root: &Path,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    model_cfg.check_input_hw(cfg.target_size, cfg.target_size)?;

    let manifest = DatasetManifest::load(data_root)?;
    let train_samples = manifest.load_split(data_root, "train")?;
    let val_samples = manifest.load_split(data_root, "val")?;
    if train_samples.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    if val_samples.is_empty() {
        return Err(Error::Config("val split is empty".into()));
    }
    if model_cfg.branches.axis {
        let have = train_samples[0].axis.points.len();
        if have != model_cfg.axis_points {
            return Err(Error::Config(format!(
                "model expects {} axis points but the dataset provides {have}",
                model_cfg.axis_points
            )));
        }
    }

    let (mut model, mut adam, start_epoch, mut best) = match resume_from {
        Some(ckpt) => {
            let loaded = load_checkpoint::<f32>(ckpt)?;
            if loaded.config != *model_cfg {
                return Err(Error::Config(
                    "checkpoint model config differs from the requested config".into(),
                ));
            }
            if loaded.seed != cfg.seed {
                return Err(Error::Config(format!(
                    "checkpoint seed {} differs from configured seed {}",
                    loaded.seed, cfg.seed
                )));
            }
            if loaded.epoch >= cfg.epochs {
                return Err(Error::Config(format!(
                    "checkpoint already has {} epochs, nothing to resume for epochs={}",
                    loaded.epoch, cfg.epochs
                )));
            }
            (loaded.model, loaded.adam, loaded.epoch, loaded.best_val_error_2d)
        }
        None => (Model::build(model_cfg, cfg.seed, true)?, Adam::new(), 0, None),
    };

    fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("epochs.jsonl");
    let mut log_file = if resume_from.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)?
    } else {
        File::create(&log_path)?
    };
    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");

    let n = train_samples.len();
    let mut log = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(cfg, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(cfg.seed, "shuffle", epoch as u64));

        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&StereoSample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let batch = make_batch(&refs, cfg.target_size, &manifest.stats)?;
            let transform = batch.transform;
            let targets_norm = batch.targets;
            let targets_px = batch.pixel_targets;
            let inputs = ModelInputs {
                images: Some(batch.images),
                depth: Some(batch.depths),
                axis: Some(batch.axis_points),
            };
            let pred = model.forward(&inputs, true)?;
            let (loss_value, grad) =
                loss_and_grad(&pred, &targets_norm, &targets_px, transform, cfg.loss_space);
            if !loss_value.is_finite() {
                return Err(Error::Diverged { epoch, step, lr });
            }
            loss_sum += loss_value * chunk.len() as f64;
            model.zero_grads();
            model.backward(&inputs, &grad);
            adam_step(&mut model, &mut adam, lr);
        }
        let train_loss = loss_sum / n as f64;

        let report = evaluate(
            &mut model,
            &val_samples,
            "val",
            &manifest.stats,
            cfg.target_size,
            cfg.batch_size,
            serde_json::Value::Null,
        )?;
        let val_2d_mean = report.agg_2d.mean;
        let val_3d_mean = report.agg_3d.map(|a| a.mean);

        if best.map_or(true, |b| val_2d_mean < b) {
            best = Some(val_2d_mean);
            save_checkpoint(&best_path, &mut model, &adam, cfg.seed, epoch + 1, best)?;
        }
        save_checkpoint(&last_path, &mut model, &adam, cfg.seed, epoch + 1, best)?;
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            let path = out_dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
            save_checkpoint(&path, &mut model, &adam, cfg.seed, epoch + 1, best)?;
        }

        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_2d_mean,
            val_3d_mean,
            wall_time: started.elapsed().as_secs_f64(),
        };
        writeln!(log_file, "{}", serde_json::to_string(&record)?)?;
        log_file.flush()?;
        log.push(record);
    }

    Ok(TrainOutcome {
        log,
        log_path,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        best_val_error_2d: best,
    })
}

/// Result of [`overfit_probe`].
#[derive(Debug, Clone)]
pub struct ProbeResult {
    /// Mean 2D error over the training samples, original-resolution
    /// pixels, evaluated after the final step.
    pub final_error_2d_px: f64,
    /// Training loss after each step.
    pub losses: Vec<f64>,
}

/// Sanity harness: fits the model to a handful of samples (the whole set
/// is one batch) for `steps` optimizer steps with the linear decay spread
/// over steps, then reports the mean training 2D pixel error. Zero steps
/// reports the untrained baseline.
#[inline(never)]
pub fn overfit_probe(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    samples: &[StereoSample],
    stats: &NormStats,
    steps: usize,
) -> Result<ProbeResult> {
    if samples.is_empty() {
        return Err(Error::Contract("overfit probe needs at least one sample".into()));
    }
    cfg.validate()?;
    model_cfg.check_input_hw(cfg.target_size, cfg.target_size)?;

    let refs: Vec<&StereoSample> = samples.iter().collect();
    let batch = make_batch(&refs, cfg.target_size, stats)?;
    let transform = batch.transform;
    let targets_norm = batch.targets;
    let targets_px = batch.pixel_targets;
    let inputs = ModelInputs {
        images: Some(batch.images),
        depth: Some(batch.depths),
        axis: Some(batch.axis_points),
    };

    let mut model = Model::<f32>::build(model_cfg, cfg.seed, true)?;
    let mut adam = Adam::new();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let lr = lr_at_step(cfg, step, steps);
        let pred = model.forward(&inputs, true)?;
        let (loss_value, grad) =
            loss_and_grad(&pred, &targets_norm, &targets_px, transform, cfg.loss_space);
        if !loss_value.is_finite() {
            return Err(Error::Diverged { epoch: 0, step, lr });
        }
        losses.push(loss_value);
        model.zero_grads();
        model.backward(&inputs, &grad);
        adam_step(&mut model, &mut adam, lr);
    }

    let pred = model.forward(&inputs, false)?;
    let mut err_sum = 0.0;
    for (i, sample) in samples.iter().enumerate() {
        let norm = [f64::from(pred[[i, 0]]), f64::from(pred[[i, 1]])];
        err_sum += error_2d(transform.denormalize(norm), sample.gt_2d);
    }
    Ok(ProbeResult {
        final_error_2d_px: err_sum / samples.len() as f64,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::tiny_sample;
    use crate::scenegen::{generate_dataset, SceneSpec, SplitCounts};
    use ndarray::Array4;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn tiny_model_cfg(axis_points: usize) -> ModelConfig {
        ModelConfig {
            base_channels: 8,
            block_counts: [1, 1, 1, 1],
            ebn_expansion: 2,
            decoder_stages: 1,
            head_hidden: vec![16],
            axis_points,
            ..ModelConfig::default()
        }
    }

    fn tiny_stats() -> NormStats {
        NormStats {
            image_mean: [0.5; 6],
            image_std: [0.25; 6],
            depth_mean: 55.0,
            depth_std: 5.0,
        }
    }

    #[test]
    fn loss_matches_hand_values_and_finite_differences() {
        let p = Point2::new(0.5, 0.5);
        assert_eq!(loss(p, p), 0.0);
        assert_eq!(loss(p, Point2::new(0.25, 0.5)), 0.0625);

        // Batch loss equals the mean of per-row scalar losses.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pred = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let tgt = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let (l, grad) = batch_loss(&pred, &tgt);
        let by_rows: f64 = (0..5)
            .map(|i| {
                loss(
                    Point2::new(pred[[i, 0]], pred[[i, 1]]),
                    Point2::new(tgt[[i, 0]], tgt[[i, 1]]),
                )
            })
            .sum::<f64>()
            / 5.0;
        assert!((l - by_rows).abs() < 1e-15);

        // Analytic gradient against central finite differences.
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..2 {
                let mut plus = pred.clone();
                plus[[i, j]] += h;
                let mut minus = pred.clone();
                minus[[i, j]] -= h;
                let numeric = (batch_loss(&plus, &tgt).0 - batch_loss(&minus, &tgt).0) / (2.0 * h);
                let analytic = grad[[i, j]];
                assert!(
                    (numeric - analytic).abs() < 1e-9,
                    "({i},{j}): {numeric} vs {analytic}"
                );
            }
        }

        // Pixel-space relation: the 2D error is the square root of the
        // single-sample pixel loss.
        let a = Point2::new(3.0, 4.0);
        let b = Point2::new(0.0, 0.0);
        assert_eq!(loss(a, b).sqrt(), error_2d(a, b));
    }

    #[test]
    fn lr_schedule_is_linear_between_the_endpoints() {
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        assert_eq!(lr_at(&cfg, 0), 1e-4);
        assert_eq!(lr_at(&cfg, 4), 8e-5);
        assert!((lr_at(&cfg, 2) - 9e-5).abs() < 1e-18);
        assert!((lr_at(&cfg, 1) - 9.5e-5).abs() < 1e-18);

        let one = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert_eq!(lr_at(&one, 0), 1e-4);
    }

    #[test]
    fn invalid_train_configs_are_rejected() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { lr_initial: 0.0, ..ok.clone() },
            TrainConfig { lr_final: 2e-4, ..ok.clone() },
            TrainConfig { target_size: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    fn random_inputs(n: usize, hw: usize, axis_points: usize, seed: u64) -> ModelInputs<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ModelInputs {
            images: Some(Array4::from_shape_simple_fn((n, 6, hw, hw), || {
                rng.random_range(-1.0f32..1.0)
            })),
            depth: Some(Array4::from_shape_simple_fn((n, 1, hw, hw), || {
                rng.random_range(-1.0f32..1.0)
            })),
            axis: Some(Array2::from_shape_simple_fn((n, 2 * axis_points), || {
                rng.random_range(0.0f32..1.0)
            })),
        }
    }

    fn weight_bits(model: &mut Model<f32>) -> Vec<u32> {
        let mut bits = Vec::new();
        model.visit_params("", &mut |_, p| bits.extend(p.value.iter().map(|v| v.to_bits())));
        bits
    }

    #[test]
    fn zero_lr_step_leaves_weights_bit_identical() {
        let cfg = tiny_model_cfg(10);
        let mut model = Model::<f32>::build(&cfg, 4, true).unwrap();
        let inputs = random_inputs(2, 32, 10, 1);
        let targets = Array2::from_elem((2, 2), 0.5f32);

        let pred = model.forward(&inputs, true).unwrap();
        let (_, grad) = batch_loss(&pred, &targets);
        model.zero_grads();
        model.backward(&inputs, &grad);
        let before = weight_bits(&mut model);
        let mut adam = Adam::new();
        adam_step(&mut model, &mut adam, 0.0);
        assert_eq!(weight_bits(&mut model), before);
    }

    #[test]
    fn checkpoint_round_trip_restores_exact_training_state() {
        let cfg = tiny_model_cfg(10);
        let mut model = Model::<f32>::build(&cfg, 4, true).unwrap();
        let mut adam = Adam::new();
        let targets = Array2::from_elem((2, 2), 0.5f32);

        // Two steps so weights, batch-norm buffers, and moments are all
        // away from their initial values.
        for s in 0..2 {
            let inputs = random_inputs(2, 32, 10, s);
            let pred = model.forward(&inputs, true).unwrap();
            let (_, grad) = batch_loss(&pred, &targets);
            model.zero_grads();
            model.backward(&inputs, &grad);
            adam_step(&mut model, &mut adam, 1e-3);
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        save_checkpoint(&path, &mut model, &adam, 4, 7, Some(1.25)).unwrap();
        let mut loaded = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.seed, 4);
        assert_eq!(loaded.best_val_error_2d, Some(1.25));
        assert_eq!(loaded.config, cfg);
        assert_eq!(weight_bits(&mut loaded.model), weight_bits(&mut model));

        let mut original_buffers = Vec::new();
        model.visit_buffers("", &mut |_, b| {
            original_buffers.extend(b.iter().map(|v| v.to_bits()))
        });
        let mut loaded_buffers = Vec::new();
        loaded.model.visit_buffers("", &mut |_, b| {
            loaded_buffers.extend(b.iter().map(|v| v.to_bits()))
        });
        assert_eq!(loaded_buffers, original_buffers);

        // One identical further step must keep both models in lockstep,
        // which exercises the restored optimizer moments and step count.
        let inputs = random_inputs(2, 32, 10, 9);
        for (m, a) in [(&mut model, &mut adam), (&mut loaded.model, &mut loaded.adam)] {
            let pred = m.forward(&inputs, true).unwrap();
            let (_, grad) = batch_loss(&pred, &targets);
            m.zero_grads();
            m.backward(&inputs, &grad);
            adam_step(m, a, 1e-3);
        }
        assert_eq!(weight_bits(&mut loaded.model), weight_bits(&mut model));

        // Dtype mismatch is refused.
        assert!(matches!(
            load_checkpoint::<f64>(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn corrupt_checkpoints_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Format { .. })));

        let cfg = tiny_model_cfg(10);
        let mut model = Model::<f32>::build(&cfg, 4, true).unwrap();
        let good = dir.path().join("good.ckpt");
        save_checkpoint(&good, &mut model, &Adam::new(), 4, 0, None).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&good, bytes).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&good), Err(Error::Format { .. })));
    }

    #[test]
    fn diverged_abort_names_the_step() {
        let mut poisoned = tiny_sample("a");
        poisoned.gt_2d = Point2::new(f64::NAN, 3.0);
        let cfg = TrainConfig { target_size: 32, ..TrainConfig::default() };
        let err = overfit_probe(&tiny_model_cfg(3), &cfg, &[poisoned], &tiny_stats(), 3)
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, step: 0, .. }), "{err}");
    }

    #[test]
    fn probe_with_zero_steps_reports_the_untrained_baseline() {
        let samples = [tiny_sample("a"), tiny_sample("b")];
        let model_cfg = tiny_model_cfg(3);
        let cfg = TrainConfig { target_size: 32, seed: 5, ..TrainConfig::default() };
        let probe = overfit_probe(&model_cfg, &cfg, &samples, &tiny_stats(), 0).unwrap();
        assert!(probe.losses.is_empty());

        // Manual baseline: same build, same batch, eval-mode forward.
        let refs: Vec<&StereoSample> = samples.iter().collect();
        let batch = make_batch(&refs, 32, &tiny_stats()).unwrap();
        let transform = batch.transform;
        let inputs = ModelInputs {
            images: Some(batch.images),
            depth: Some(batch.depths),
            axis: Some(batch.axis_points),
        };
        let mut model = Model::<f32>::build(&model_cfg, 5, true).unwrap();
        let pred = model.forward(&inputs, false).unwrap();
        let expected = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let norm = [f64::from(pred[[i, 0]]), f64::from(pred[[i, 1]])];
                error_2d(transform.denormalize(norm), s.gt_2d)
            })
            .sum::<f64>()
            / 2.0;
        assert_eq!(probe.final_error_2d_px, expected);
    }

    #[test]
    fn image_only_probe_loss_converges_after_smoothing() {
        let samples = [tiny_sample("a"), tiny_sample("b")];
        let model_cfg = ModelConfig {
            branches: crate::model::BranchFlags { image: true, depth: false, axis: false },
            ..tiny_model_cfg(3)
        };
        let cfg = TrainConfig { target_size: 32, seed: 1, ..TrainConfig::default() };
        let probe = overfit_probe(&model_cfg, &cfg, &samples, &tiny_stats(), 30).unwrap();

        // Moving average over five steps must decrease overall and never
        // tick upward by more than a rounding margin.
        let smoothed: Vec<f64> = probe
            .losses
            .windows(5)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect();
        assert!(smoothed.last().unwrap() < smoothed.first().unwrap());
        for pair in smoothed.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-3), "smoothed loss rose: {pair:?}");
        }
    }

    #[test]
    fn probe_trains_in_both_loss_spaces() {
        let samples = [tiny_sample("a"), tiny_sample("b")];
        for space in [LossSpace::Normalized, LossSpace::Pixel] {
            let cfg = TrainConfig {
                target_size: 32,
                seed: 2,
                loss_space: space,
                ..TrainConfig::default()
            };
            let probe = overfit_probe(&tiny_model_cfg(3), &cfg, &samples, &tiny_stats(), 5)
                .unwrap();
            assert_eq!(probe.losses.len(), 5);
            assert!(probe.losses.iter().all(|l| l.is_finite()));
            assert!(probe.final_error_2d_px.is_finite());
        }
    }

    /// End-to-end: bookkeeping, determinism across runs, and exact resume.
    #[test]
    fn train_writes_logs_repeats_exactly_and_resumes_exactly() {
        let spec = SceneSpec {
            rig: crate::geometry::CameraRig::new(75.0, 4.5, 75.0, 75.0, [32.0, 32.0], [64, 64])
                .unwrap(),
            ..SceneSpec::default()
        };
        let data = tempfile::tempdir().unwrap();
        let counts = SplitCounts { train: 6, val: 2, test: 2 };
        generate_dataset(&spec, counts, data.path(), 31).unwrap();

        let model_cfg = tiny_model_cfg(spec.axis_points);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 2,
            seed: 9,
            target_size: 32,
            ..TrainConfig::default()
        };

        let key = |r: &EpochRecord| {
            (
                r.epoch,
                r.lr.to_bits(),
                r.train_loss.to_bits(),
                r.val_2d_mean.to_bits(),
                r.val_3d_mean.map(f64::to_bits),
            )
        };

        let out_a = tempfile::tempdir().unwrap();
        let a = train(&model_cfg, &cfg, data.path(), out_a.path(), None).unwrap();
        assert_eq!(a.log.len(), 2);
        assert!(a.best_checkpoint.is_file());
        assert!(a.last_checkpoint.is_file());
        assert!(a.best_val_error_2d.is_some());
        let logged: Vec<EpochRecord> = std::fs::read_to_string(&a.log_path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(logged.len(), 2);
        for (x, y) in logged.iter().zip(a.log.iter()) {
            assert_eq!(key(x), key(y));
        }

        // Same seed and config: identical loss curve.
        let out_b = tempfile::tempdir().unwrap();
        let b = train(&model_cfg, &cfg, data.path(), out_b.path(), None).unwrap();
        let curve = |log: &[EpochRecord]| log.iter().map(key).collect::<Vec<_>>();
        assert_eq!(curve(&a.log), curve(&b.log));

        // One epoch, then resume for the second: the resumed record must
        // match the uninterrupted run's second record exactly.
        let out_c = tempfile::tempdir().unwrap();
        let short = TrainConfig { epochs: 1, ..cfg.clone() };
        let c = train(&model_cfg, &short, data.path(), out_c.path(), None).unwrap();
        assert_eq!(curve(&c.log), curve(&a.log[..1]));

        let out_d = tempfile::tempdir().unwrap();
        let d = train(
            &model_cfg,
            &cfg,
            data.path(),
            out_d.path(),
            Some(&c.last_checkpoint),
        )
        .unwrap();
        assert_eq!(d.log.len(), 1);
        assert_eq!(key(&d.log[0]), key(&a.log[1]));

        // Resume refuses a mismatched seed and an already-finished run.
        let wrong_seed = TrainConfig { seed: 10, ..cfg.clone() };
        assert!(matches!(
            train(&model_cfg, &wrong_seed, data.path(), out_d.path(), Some(&c.last_checkpoint)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train(&model_cfg, &short, data.path(), out_d.path(), Some(&c.last_checkpoint)),
            Err(Error::Config(_))
        ));

        // Dataset axis-point mismatch is a config error.
        let bad = ModelConfig { axis_points: 7, ..model_cfg };
        assert!(matches!(
            train(&bad, &cfg, data.path(), out_d.path(), None),
            Err(Error::Config(_))
        ));
    }
}
