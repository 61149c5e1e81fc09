//! Command implementations behind the `framecast` binary: `train`,
//! `rollout`, `evaluate`, `plot`. Each command is a plain function returning
//! `Result`, so the whole surface is drivable from tests (and from the
//! Python bindings) without spawning processes.

use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{
    dataset_from_sequences, frame_to_image, load_directory_dataset, load_sequence_dir,
    ColorMode, DirectoryLayout, FrameSequence,
};
use crate::error::{Error, Result};
use crate::losses::{LOG_VARIANCE_MAX, LOG_VARIANCE_MIN};
use crate::metrics::{fvd, mse, perceptual_distance, psnr_from_mse, FvdEntry, MetricReport};
use crate::plotting::{render_bar_chart, render_line_chart, Series};
use crate::predictor::Predictor;
use crate::training::{fit, load_checkpoint, read_metric_log, EpochLog};

/// Exclusive ownership of an output directory for the duration of a
/// command. Concurrent invocations must target distinct directories.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::config(format!(
                "output directory {} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn write_run_info(out_dir: &Path, command: &str) -> Result<()> {
    // Static provenance only: timestamps would break byte-identical reruns.
    let info = serde_json::json!({
        "tool": "framecast",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
    });
    let path = out_dir.join("run_info.json");
    std::fs::write(&path, serde_json::to_string_pretty(&info).unwrap())
        .map_err(|e| Error::io(&path, e))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub struct TrainArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub resume: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub metric_log: PathBuf,
    pub epochs_logged: usize,
}

/// Run a training job described by a config file. Writes the resolved
/// config, run info, per-epoch metric log, and checkpoints under the output
/// directory.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.deterministic {
        config.deterministic = true;
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    let out_dir = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::config("no output directory: set out_dir or pass --out"))?;
    config.validate()?;

    let _lock = OutputLock::acquire(&out_dir)?;
    config.save(&out_dir.join("config.toml"))?;
    write_run_info(&out_dir, "train")?;

    let dataset = config.build_dataset()?;
    let extractor = config.build_extractor()?;
    let mut model = config.build_model()?;
    let train_config = config.train_config();
    let run_metadata = serde_json::to_value(&config)
        .map_err(|e| Error::config(format!("config to metadata: {e}")))?;

    let outcome = fit(
        &mut model,
        &extractor,
        &dataset,
        &train_config,
        &out_dir,
        args.resume.as_deref(),
        &run_metadata,
    )?;
    Ok(TrainOutcome {
        out_dir,
        final_checkpoint: outcome.final_checkpoint,
        metric_log: outcome.metric_log,
        epochs_logged: outcome.log_rows.len(),
    })
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

pub struct RolloutArgs {
    pub checkpoint: PathBuf,
    pub input_dir: PathBuf,
    pub steps: usize,
    pub out: PathBuf,
    pub sigma_heatmaps: bool,
    pub seed: Option<u64>,
    pub deterministic: bool,
}

pub struct RolloutOutcome {
    pub frames: Vec<PathBuf>,
    pub preview: PathBuf,
    pub heatmaps: Vec<PathBuf>,
}

fn load_model_and_config(checkpoint: &Path) -> Result<(Predictor, RunConfig)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let run_config: RunConfig = serde_json::from_value(ckpt.extra.clone()).map_err(|e| {
        Error::io(
            checkpoint,
            format!("checkpoint does not embed a run config: {e}"),
        )
    })?;
    let model = Predictor::from_params(ckpt.predictor_config, &ckpt.params)?;
    Ok((model, run_config))
}

/// Resize/crop a raw sequence to the model's frame geometry using the
/// deterministic center-crop path.
fn conform_sequence(seq: FrameSequence, model: &Predictor) -> Result<FrameSequence> {
    let cfg = model.config();
    if seq.channels() != cfg.channels {
        return Err(Error::invalid(format!(
            "input has {} channels, model wants {}",
            seq.channels(),
            cfg.channels
        )));
    }
    let len = seq.len();
    let transform = crate::data::TransformSpec {
        target_height: cfg.height,
        target_width: cfg.width,
        rescale: crate::data::RescaleMode::ShorterSide,
        random_crop: false,
        crop_seed: 0,
    };
    let ds = dataset_from_sequences(vec![seq], len, transform)?;
    ds.sample_window(0, 0)
}

/// Iterate the predictor from the last `n` frames of an input directory,
/// writing numbered frames, an animated GIF preview, and (optionally)
/// per-pixel variance heatmaps.
pub fn cmd_rollout(args: &RolloutArgs) -> Result<RolloutOutcome> {
    if args.steps < 1 {
        return Err(Error::invalid("--steps must be >= 1"));
    }
    let (mut model, run_config) = load_model_and_config(&args.checkpoint)?;
    if args.deterministic {
        let mut cfg = model.config().clone();
        cfg.deterministic_latent = true;
        model = Predictor::from_params(cfg, model.params())?;
    }
    let n = model.config().input_frames;

    let color = match model.config().channels {
        1 => ColorMode::Gray,
        _ => ColorMode::Rgb,
    };
    let raw = load_sequence_dir(&args.input_dir, color)?;
    if raw.len() < n {
        return Err(Error::invalid(format!(
            "input sequence has {} frames but the model needs at least n = {n}",
            raw.len()
        )));
    }
    let conformed = conform_sequence(raw, &model)?;
    let window = conformed.window(conformed.len() - n, n)?;

    let mut rng_store;
    let rng = if model.config().deterministic_latent {
        None
    } else {
        rng_store = ChaCha8Rng::seed_from_u64(args.seed.unwrap_or(run_config.seed));
        Some(&mut rng_store)
    };

    let _lock = OutputLock::acquire(&args.out)?;
    write_run_info(&args.out, "rollout")?;

    // Per-step prediction so the sigma channel is available per frame.
    let mut frames = Vec::with_capacity(args.steps);
    let mut heatmaps = Vec::new();
    let mut cur = window;
    let mut rng = rng;
    let mut predicted = Vec::with_capacity(args.steps);
    for step in 0..args.steps {
        let (pred, _) = model.predict_next(&cur, rng.as_deref_mut())?;
        let frame_path = args.out.join(format!("frame_{step:04}.png"));
        frame_to_image(&pred.mean().view())
            .save(&frame_path)
            .map_err(|e| Error::io(&frame_path, e))?;
        frames.push(frame_path);
        if args.sigma_heatmaps {
            // Log-scale map of the (always positive) variance onto [0,1].
            let heat = pred.log_variance().mapv(|lv| {
                (lv - LOG_VARIANCE_MIN) / (LOG_VARIANCE_MAX - LOG_VARIANCE_MIN)
            });
            let heat_path = args.out.join(format!("sigma_{step:04}.png"));
            frame_to_image(&heat.view())
                .save(&heat_path)
                .map_err(|e| Error::io(&heat_path, e))?;
            heatmaps.push(heat_path);
        }
        predicted.push(pred.mean().clone());
        cur = cur.push_frame(pred.mean())?;
    }

    let preview = args.out.join("preview.gif");
    write_gif(&preview, &predicted)?;
    Ok(RolloutOutcome {
        frames,
        preview,
        heatmaps,
    })
}

fn write_gif(path: &Path, frames: &[ndarray::Array3<f64>]) -> Result<()> {
    use image::codecs::gif::{GifEncoder, Repeat};
    use image::{Delay, Frame};
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = GifEncoder::new(file);
    encoder
        .set_repeat(Repeat::Infinite)
        .map_err(|e| Error::io(path, e))?;
    for frame in frames {
        let rgba = frame_to_image(&frame.view()).to_rgba8();
        let gif_frame = Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(100, 1));
        encoder
            .encode_frame(gif_frame)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub data_dir: PathBuf,
    /// Rollout horizons for FVD; defaults to the run config's list.
    pub horizons: Option<Vec<usize>>,
    pub out: PathBuf,
}

pub struct EvaluateOutcome {
    pub report_path: PathBuf,
    pub report: MetricReport,
}

/// Evaluate a checkpoint on a held-out directory dataset: single-step
/// MSE / PSNR / perceptual distance, plus FVD at each horizon.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluateOutcome> {
    let (model, run_config) = load_model_and_config(&args.checkpoint)?;
    let horizons = match &args.horizons {
        Some(h) if !h.is_empty() => h.clone(),
        _ => run_config.metrics.horizons.clone(),
    };
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::invalid("horizons must be nonempty and positive"));
    }
    let n = model.config().input_frames;
    let max_h = *horizons.iter().max().unwrap();

    let extractor = run_config.build_extractor()?;
    let embedder = run_config.build_embedder()?;

    let dataset = load_directory_dataset(
        &args.data_dir,
        DirectoryLayout {
            color: run_config.dataset.color,
        },
        n + max_h,
        run_config.transform(),
    )?;
    if dataset.num_sequences() < 2 {
        return Err(Error::invalid(format!(
            "evaluation needs >= 2 sequences of at least {} frames for FVD",
            n + max_h
        )));
    }

    let mut sum_mse = 0.0;
    let mut sum_psnr = 0.0;
    let mut sum_lpips = 0.0;
    let mut real_clips: Vec<Vec<FrameSequence>> = vec![Vec::new(); horizons.len()];
    let mut pred_clips: Vec<Vec<FrameSequence>> = vec![Vec::new(); horizons.len()];
    for si in 0..dataset.num_sequences() {
        let window = dataset.sample_window(si, 0)?;
        let inputs = window.window(0, n)?;
        let target = window.frame(n).to_owned();
        let (pred, _) = model.predict_next(&inputs, None)?;
        let e = mse(pred.mean(), &target)?;
        sum_mse += e;
        sum_psnr += psnr_from_mse(e, 1.0);
        sum_lpips += perceptual_distance(pred.mean(), &target, &extractor)?;

        let full_roll = model.rollout(&inputs, max_h, None)?;
        for (hi, h) in horizons.iter().enumerate() {
            real_clips[hi].push(window.window(n, *h)?);
            pred_clips[hi].push(full_roll.window(0, *h)?);
        }
    }
    let count = dataset.num_sequences();
    let mut fvd_entries: Vec<FvdEntry> = Vec::new();
    for (hi, _) in horizons.iter().enumerate() {
        let (_, entry) = fvd(&real_clips[hi], &pred_clips[hi], &embedder)?;
        fvd_entries.push(entry);
    }

    let report = MetricReport {
        mse: sum_mse / count as f64,
        psnr_db: sum_psnr / count as f64,
        lpips_style: sum_lpips / count as f64,
        fvd: fvd_entries,
        sample_count: count,
        psnr_cap_db: crate::metrics::PSNR_CAP_DB,
    };

    let _lock = OutputLock::acquire(&args.out)?;
    write_run_info(&args.out, "evaluate")?;
    let report_path = args.out.join("report.json");
    report.save(&report_path)?;
    Ok(EvaluateOutcome {
        report_path,
        report,
    })
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

pub struct PlotArgs {
    pub log: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out: PathBuf,
}

pub struct PlotOutcome {
    pub files: Vec<PathBuf>,
    /// (epoch, self_fed_steps) points of the schedule curve, when a log was
    /// plotted.
    pub schedule_points: Vec<(usize, usize)>,
}

/// Render loss curves and the self-fed schedule from a metric log, and / or
/// per-horizon FVD bars from a report.
pub fn cmd_plot(args: &PlotArgs) -> Result<PlotOutcome> {
    if args.log.is_none() && args.report.is_none() {
        return Err(Error::invalid("pass --log and/or --report"));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut files = Vec::new();
    let mut schedule_points = Vec::new();

    if let Some(log_path) = &args.log {
        let rows = read_metric_log(log_path)?;
        let curve = |f: fn(&EpochLog) -> f64| -> Vec<(f64, f64)> {
            rows.iter().map(|r| (r.epoch as f64, f(r))).collect()
        };
        let terms: [(&str, fn(&EpochLog) -> f64); 4] = [
            ("reconstruction", |r| r.reconstruction),
            ("perceptual", |r| r.perceptual),
            ("latent_kl", |r| r.latent_kl),
            ("total", |r| r.total),
        ];
        for (name, f) in terms {
            let path = args.out.join(format!("loss_{name}.png"));
            render_line_chart(
                &[Series {
                    label: name.into(),
                    points: curve(f),
                }],
                &path,
            )?;
            files.push(path);
        }

        schedule_points = rows.iter().map(|r| (r.epoch, r.self_fed_steps)).collect();
        let path = args.out.join("schedule.png");
        render_line_chart(
            &[Series {
                label: "self_fed_steps".into(),
                points: schedule_points
                    .iter()
                    .map(|(e, s)| (*e as f64, *s as f64))
                    .collect(),
            }],
            &path,
        )?;
        files.push(path);
    }

    if let Some(report_path) = &args.report {
        let report = MetricReport::load(report_path)?;
        if report.fvd.is_empty() {
            return Err(Error::invalid("report has no FVD entries to plot"));
        }
        let bars: Vec<(String, f64)> = report
            .fvd
            .iter()
            .map(|e| (e.horizon.to_string(), e.value))
            .collect();
        let path = args.out.join("fvd_horizons.png");
        render_bar_chart(&bars, &path)?;
        files.push(path);
    }

    Ok(PlotOutcome {
        files,
        schedule_points,
    })
}

// ---------------------------------------------------------------------------
// helpers shared with tests
// ---------------------------------------------------------------------------

/// Split a sequence into per-frame images under `dir` (test/driver helper).
pub fn export_frames(seq: &FrameSequence, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..seq.len() {
        let path = dir.join(format!("{t:06}.png"));
        frame_to_image(&seq.frames().index_axis(Axis(0), t))
            .save(&path)
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
