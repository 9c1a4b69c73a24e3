//! Subcommand implementations: each resolves its configuration, runs the
//! library call, prints a human-readable result, and records `run.json`.

use std::time::{Instant, SystemTime};

use probesight::dataio::DatasetManifest;
use probesight::evaluation::{evaluate, report_table, save_overlays, save_report};
use probesight::scenegen::{generate_dataset, SplitCounts};
use probesight::selftest::run_all;
use probesight::training::{load_checkpoint, train, LoadedCheckpoint};

use crate::config::{
    resolve, usage, AppError, AppResult, FileConfig, Overrides, RunConfig, write_run_record,
};
use crate::{EvalArgs, GenArgs, PredictArgs, SelftestArgs, TrainArgs};

struct Run {
    rc: RunConfig,
    started: SystemTime,
    clock: Instant,
}

impl Run {
    fn new(config_flag: Option<&std::path::Path>, overrides: Overrides) -> AppResult<Self> {
        let file = FileConfig::load(config_flag)?;
        Ok(Run {
            rc: resolve(file, overrides)?,
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    fn finish(&self, command: &str, dir: &std::path::Path) -> AppResult<()> {
        let path = write_run_record(dir, command, &self.rc, self.started, self.clock.elapsed())?;
        println!("run record: {}", path.display());
        Ok(())
    }
}

fn load_model(rc: &RunConfig) -> AppResult<LoadedCheckpoint<f32>> {
    let path = rc.require_checkpoint()?;
    let loaded = load_checkpoint::<f32>(&path)?;
    println!(
        "loaded {} (epoch {}, best val 2D {})",
        path.display(),
        loaded.epoch,
        loaded
            .best_val_error_2d
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.3} px")),
    );
    Ok(loaded)
}

/// Fails early when the dataset's axis feature width cannot feed the
/// checkpointed model.
fn check_axis_width(
    loaded: &LoadedCheckpoint<f32>,
    samples: &[probesight::dataio::StereoSample],
) -> AppResult<()> {
    if loaded.config.branches.axis {
        if let Some(s) = samples.first() {
            if s.axis.points.len() != loaded.config.axis_points {
                return Err(usage(format!(
                    "checkpoint expects {} axis points but the dataset provides {}",
                    loaded.config.axis_points,
                    s.axis.points.len()
                )));
            }
        }
    }
    Ok(())
}

pub fn cmd_gen(args: GenArgs) -> AppResult<()> {
    let run = Run::new(
        args.shared.config.as_deref(),
        Overrides {
            seed: args.shared.seed,
            out: args.out,
            train: args.train,
            val: args.val,
            test: args.test,
            image_size: args.image_size,
            focal_px: args.focal_px,
            baseline_mm: args.baseline_mm,
            axis_points: args.axis_points,
            ..Overrides::default()
        },
    )?;
    let out = run.rc.require_out()?;
    let spec = run.rc.scene_spec()?;
    let counts = SplitCounts {
        train: run.rc.train,
        val: run.rc.val,
        test: run.rc.test,
    };
    generate_dataset(&spec, counts, &out, run.rc.seed)?;
    println!(
        "generated {} samples ({} train, {} val, {} test) at {}x{} into {}",
        counts.train + counts.val + counts.test,
        counts.train,
        counts.val,
        counts.test,
        run.rc.image_size,
        run.rc.image_size,
        out.display(),
    );
    run.finish("gen", &out)
}

pub fn cmd_train(args: TrainArgs) -> AppResult<()> {
    let run = Run::new(
        args.shared.config.as_deref(),
        Overrides {
            seed: args.shared.seed,
            data: args.data,
            out: args.out,
            checkpoint: args.checkpoint,
            epochs: args.epochs,
            batch_size: args.batch_size,
            target_size: args.target_size,
            branches: args.branches,
            ..Overrides::default()
        },
    )?;
    let data = run.rc.require_data()?;
    let out = run.rc.require_out()?;
    let resume = match &run.rc.checkpoint {
        Some(_) => Some(run.rc.require_checkpoint()?),
        None => None,
    };
    let model_cfg = run.rc.model_config()?;
    let train_cfg = run.rc.train_config()?;

    let outcome = train(&model_cfg, &train_cfg, &data, &out, resume.as_deref())?;
    for rec in &outcome.log {
        let val_3d = rec
            .val_3d_mean
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.3} mm"));
        println!(
            "epoch {:>4}  lr {:.3e}  train loss {:.6}  val 2D {:.3} px  val 3D {val_3d}",
            rec.epoch, rec.lr, rec.train_loss, rec.val_2d_mean,
        );
    }
    if let Some(best) = outcome.best_val_error_2d {
        println!("best val 2D error: {best:.3} px");
    }
    println!("best checkpoint: {}", outcome.best_checkpoint.display());
    println!("last checkpoint: {}", outcome.last_checkpoint.display());
    println!("epoch log: {}", outcome.log_path.display());
    run.finish("train", &out)
}

pub fn cmd_eval(args: EvalArgs) -> AppResult<()> {
    let run = Run::new(
        args.shared.config.as_deref(),
        Overrides {
            seed: args.shared.seed,
            data: args.data,
            out: args.out,
            split: args.split,
            checkpoint: args.checkpoint,
            batch_size: args.batch_size,
            target_size: args.target_size,
            ..Overrides::default()
        },
    )?;
    let data = run.rc.require_data()?;
    let out = run.rc.require_out()?;
    let mut loaded = load_model(&run.rc)?;
    let manifest = DatasetManifest::load(&data)?;
    let samples = manifest.load_split(&data, &run.rc.split)?;
    check_axis_width(&loaded, &samples)?;

    let report = evaluate(
        &mut loaded.model,
        &samples,
        &run.rc.split,
        &manifest.stats,
        run.rc.target_size,
        run.rc.batch_size,
        serde_json::to_value(&run.rc)?,
    )?;
    save_report(&report, &out)?;
    save_overlays(&samples, &report, &out)?;
    print!("{}", report_table(&report));
    println!("report: {}", out.join("report.json").display());
    println!("overlays: {}", out.join("overlays").display());
    run.finish("eval", &out)
}

pub fn cmd_predict(args: PredictArgs) -> AppResult<()> {
    let run = Run::new(
        args.shared.config.as_deref(),
        Overrides {
            seed: args.shared.seed,
            data: args.data,
            out: args.out,
            split: args.split,
            checkpoint: args.checkpoint,
            sample: args.sample,
            target_size: args.target_size,
            ..Overrides::default()
        },
    )?;
    let data = run.rc.require_data()?;
    let out = run.rc.require_out()?;
    let mut loaded = load_model(&run.rc)?;
    let manifest = DatasetManifest::load(&data)?;
    let samples = manifest.load_split(&data, &run.rc.split)?;
    let sample = match &run.rc.sample {
        Some(id) => samples
            .iter()
            .find(|s| &s.sample_id == id)
            .ok_or_else(|| {
                usage(format!("no sample '{id}' in split '{}'", run.rc.split))
            })?
            .clone(),
        None => samples
            .first()
            .ok_or_else(|| usage(format!("split '{}' is empty", run.rc.split)))?
            .clone(),
    };
    let one = vec![sample];
    check_axis_width(&loaded, &one)?;

    let report = evaluate(
        &mut loaded.model,
        &one,
        &run.rc.split,
        &manifest.stats,
        run.rc.target_size,
        1,
        serde_json::to_value(&run.rc)?,
    )?;
    let row = &report.rows[0];
    println!("sample {}", row.sample_id);
    println!(
        "  2D prediction ({:.2}, {:.2}) px, ground truth ({:.2}, {:.2}) px, error {:.3} px",
        row.pred_2d[0], row.pred_2d[1], row.gt_2d[0], row.gt_2d[1], row.err_2d_px,
    );
    match (row.pred_3d, row.gt_3d, row.err_3d_mm) {
        (Some(p), Some(g), Some(e)) => println!(
            "  3D prediction ({:.2}, {:.2}, {:.2}) mm, ground truth ({:.2}, {:.2}, {:.2}) mm, error {:.3} mm",
            p[0], p[1], p[2], g[0], g[1], g[2], e,
        ),
        _ => println!("  3D prediction unavailable: no valid depth at the predicted pixel"),
    }
    if args.overlay {
        save_overlays(&one, &report, &out)?;
        println!(
            "  overlay: {}",
            out.join("overlays").join(format!("{}.png", row.sample_id)).display()
        );
    }
    run.finish("predict", &out)
}

pub fn cmd_selftest(args: SelftestArgs) -> AppResult<()> {
    let run = Run::new(
        args.shared.config.as_deref(),
        Overrides { seed: args.shared.seed, out: args.out, ..Overrides::default() },
    )?;
    let reports = run_all();
    for report in &reports {
        println!("{}", report.render());
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if let Some(out) = &run.rc.out {
        run.finish("selftest", out)?;
    }
    if failed > 0 {
        return Err(AppError::Internal(anyhow::anyhow!(
            "self-test failed: {failed} of {} suites",
            reports.len()
        )));
    }
    Ok(())
}
