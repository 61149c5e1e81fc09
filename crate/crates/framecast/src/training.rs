//! Cycle training: a curriculum that progressively replaces real input
//! frames with the model's own predictions, severed from the gradient tape,
//! so the predictor learns to absorb its own errors without backprop
//! through time.
//!
//! One `training_step` builds a single graph over `s + 1` sequential
//! predictions. The fed-back mean passes through `stop_gradient`, so the
//! gradient of step `j`'s loss touches only step `j`'s forward pass; all
//! step losses are averaged and one optimizer update is applied per window
//! batch.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::{Array2, Array3, Array4, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::autodiff::{Graph, NodeId};
use crate::data::{derive_seed, FrameSequence, SequenceDataset};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::losses::{kl_uncertainty_node, latent_kl_node, perceptual_loss_node, LossWeights};
use crate::nn::{Adam, Bound, ParamSet};
use crate::predictor::{Predictor, PredictorConfig};

// Seed-stream tags.
const TAG_SHUFFLE: u64 = 1;
const TAG_LATENT: u64 = 2;

/// Mapping from training progress to the number of self-fed prediction
/// steps (0 before `start_fraction`, then a stepwise-linear ramp from 1 to
/// `max_self_fed_steps` at the final epoch).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSchedule {
    pub start_fraction: f64,
    pub max_self_fed_steps: usize,
    pub ramp: Ramp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ramp {
    StepwiseLinear,
}

impl CycleSchedule {
    /// Default curriculum for `n` input frames: start halfway, ramp to n+1.
    pub fn for_input_frames(n: usize) -> Self {
        CycleSchedule {
            start_fraction: 0.5,
            max_self_fed_steps: n + 1,
            ramp: Ramp::StepwiseLinear,
        }
    }

    /// A schedule that never self-feeds (the non-cycle baseline).
    pub fn disabled() -> Self {
        CycleSchedule {
            start_fraction: 1.0,
            max_self_fed_steps: 1,
            ramp: Ramp::StepwiseLinear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.start_fraction) {
            return Err(Error::config(format!(
                "start_fraction must lie in [0,1], got {}",
                self.start_fraction
            )));
        }
        if self.max_self_fed_steps == 0 {
            return Err(Error::config("max_self_fed_steps must be >= 1"));
        }
        Ok(())
    }

    /// Largest step count the schedule ever requests over a run.
    pub fn peak_steps(&self, total_epochs: usize) -> usize {
        (0..total_epochs)
            .map(|e| cycle_steps_for_epoch(self, e, total_epochs).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }
}

/// Self-fed prediction steps for one epoch.
pub fn cycle_steps_for_epoch(
    schedule: &CycleSchedule,
    epoch: usize,
    total_epochs: usize,
) -> Result<usize> {
    schedule.validate()?;
    if total_epochs == 0 || epoch >= total_epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} out of range for {total_epochs} epochs"
        )));
    }
    let first = (schedule.start_fraction * total_epochs as f64).ceil() as usize;
    if epoch < first {
        return Ok(0);
    }
    let last = total_epochs - 1;
    if first >= last {
        return Ok(schedule.max_self_fed_steps);
    }
    let progress = (epoch - first) as f64 / (last - first) as f64;
    let steps = (1.0 + progress * (schedule.max_self_fed_steps - 1) as f64).ceil() as usize;
    Ok(steps.min(schedule.max_self_fed_steps))
}

/// Optimizer settings (adaptive-moment gradient descent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            name: "adam".into(),
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name != "adam" {
            return Err(Error::config(format!(
                "unknown optimizer {:?} (supported: adam)",
                self.name
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }

    pub fn build(&self) -> Adam {
        let mut adam = Adam::new(self.learning_rate);
        adam.beta1 = self.beta1;
        adam.beta2 = self.beta2;
        adam.epsilon = self.epsilon;
        adam
    }
}

/// Full training-run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub schedule: CycleSchedule,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (the final epoch always
    /// saves).
    pub checkpoint_every: usize,
    /// Bitwise-reproducible mode: wall times are logged as zero.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4,
            optimizer: OptimizerConfig::default(),
            loss: LossWeights::default(),
            schedule: CycleSchedule::for_input_frames(6),
            seed: 0,
            checkpoint_every: 50,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        self.optimizer.validate()?;
        self.loss.validate()?;
        self.schedule.validate()
    }
}

/// Loss values of one prediction step inside a training step.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepLoss {
    pub reconstruction: f64,
    pub perceptual: f64,
    pub latent_kl: f64,
    pub total: f64,
    /// How many of this step's input frames were the model's own
    /// predictions.
    pub self_fed_inputs: usize,
}

/// Outcome of one optimizer update over a window batch.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub per_step: Vec<StepLoss>,
    /// Mean over prediction steps (the optimized quantity).
    pub mean_total: f64,
}

struct CycleGraph {
    graph: Graph,
    bound: Bound,
    step_totals: Vec<NodeId>,
    per_step: Vec<StepLoss>,
    mean_total: NodeId,
}

/// Stack the same time index of each window into one (B,C,H,W) array.
fn stack_batch(windows: &[FrameSequence], t: usize) -> ArrayD<f64> {
    let (c, h, w) = (
        windows[0].channels(),
        windows[0].height(),
        windows[0].width(),
    );
    let mut out = Array4::zeros((windows.len(), c, h, w));
    for (b, win) in windows.iter().enumerate() {
        out.index_axis_mut(Axis(0), b).assign(&win.frame(t));
    }
    out.into_dyn()
}

/// Build the full cycle graph: `s + 1` sequential predictions over a window
/// batch, each fed back through `stop_gradient`.
fn build_cycle_graph(
    model: &Predictor,
    extractor: &FeatureExtractor,
    windows: &[FrameSequence],
    self_fed_steps: usize,
    weights: &LossWeights,
    epsilons: Option<&[Array2<f64>]>,
) -> Result<CycleGraph> {
    weights.validate()?;
    if windows.is_empty() {
        return Err(Error::invalid("empty window batch"));
    }
    let n = model.config().input_frames;
    let needed = n + self_fed_steps + 1;
    for win in windows {
        if win.len() < needed {
            return Err(Error::invalid(format!(
                "window of {} frames too short: n={n} plus {} self-fed steps needs {needed}",
                win.len(),
                self_fed_steps
            )));
        }
        if win.channels() != model.config().channels
            || win.height() != model.config().height
            || win.width() != model.config().width
        {
            return Err(Error::invalid("window frame geometry does not match model"));
        }
    }
    if let Some(eps) = epsilons {
        if eps.len() != self_fed_steps + 1 {
            return Err(Error::invalid("need one epsilon per prediction step"));
        }
    }

    let mut g = Graph::new();
    let bound = model.params().bind(&mut g);

    // Conditioning frames, oldest first.
    let mut input_nodes: Vec<NodeId> = (0..n).map(|t| g.leaf(stack_batch(windows, t))).collect();

    let mut step_totals = Vec::with_capacity(self_fed_steps + 1);
    let mut per_step = Vec::with_capacity(self_fed_steps + 1);
    for j in 0..=self_fed_steps {
        let input = g.concat_channels(&input_nodes);
        let eps = epsilons.map(|e| &e[j]);
        let nodes = model.forward_nodes(&mut g, &bound, input, eps);

        let target = g.leaf(stack_batch(windows, n + j));
        let recon = kl_uncertainty_node(
            &mut g,
            nodes.mean,
            nodes.log_variance,
            target,
            weights.alpha,
        );

        let pred_taps = extractor.forward_graph(&mut g, nodes.mean)?;
        let target_taps = extractor.forward_graph(&mut g, target)?;
        let pred_ids: Vec<NodeId> = pred_taps.iter().map(|(_, id)| *id).collect();
        // Target features are constants; cut them from the tape so backward
        // skips their conv stacks.
        let target_ids: Vec<NodeId> = target_taps
            .iter()
            .map(|(_, id)| g.stop_gradient(*id))
            .collect();
        let perceptual = perceptual_loss_node(&mut g, &pred_ids, &target_ids);

        let latent_kl = latent_kl_node(&mut g, nodes.latent_mean, nodes.latent_logvar);

        let wr = g.mul_scalar(recon, weights.reconstruction_weight);
        let wp = g.mul_scalar(perceptual, weights.perceptual_weight);
        let wk = g.mul_scalar(latent_kl, weights.latent_kl_weight);
        let sum = g.add(wr, wp);
        let total = g.add(sum, wk);
        step_totals.push(total);
        per_step.push(StepLoss {
            reconstruction: g.scalar_value(recon),
            perceptual: g.scalar_value(perceptual),
            latent_kl: g.scalar_value(latent_kl),
            total: g.scalar_value(total),
            self_fed_inputs: j.min(n),
        });

        if j < self_fed_steps {
            // The newest input slot becomes the prediction, gradients
            // severed: the next step treats it as ordinary data.
            let fed = g.stop_gradient(nodes.mean);
            input_nodes.rotate_left(1);
            let last = input_nodes.len() - 1;
            input_nodes[last] = fed;
        }
    }

    let mut acc = step_totals[0];
    for t in &step_totals[1..] {
        acc = g.add(acc, *t);
    }
    let mean_total = g.mul_scalar(acc, 1.0 / step_totals.len() as f64);

    Ok(CycleGraph {
        graph: g,
        bound,
        step_totals,
        per_step,
        mean_total,
    })
}

fn draw_epsilons(
    model: &Predictor,
    batch: usize,
    steps: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Option<Vec<Array2<f64>>>> {
    if model.config().deterministic_latent {
        return Ok(None);
    }
    let rng = rng.ok_or_else(|| {
        Error::invalid("stochastic latent requires an RNG during training")
    })?;
    let dim = model.config().latent_dim;
    Ok(Some(
        (0..=steps)
            .map(|_| {
                Array2::from_shape_fn((batch, dim), |_| rand::Rng::sample(rng, StandardNormal))
            })
            .collect(),
    ))
}

/// One optimizer update on a single window (batch of one).
pub fn training_step(
    model: &mut Predictor,
    extractor: &FeatureExtractor,
    optimizer: &mut Adam,
    window: &FrameSequence,
    self_fed_steps: usize,
    weights: &LossWeights,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<StepOutcome> {
    training_step_batch(
        model,
        extractor,
        optimizer,
        std::slice::from_ref(window),
        self_fed_steps,
        weights,
        rng,
    )
}

/// One optimizer update on a window batch: `s + 1` predictions per window,
/// per-step losses averaged, a single parameter update.
pub fn training_step_batch(
    model: &mut Predictor,
    extractor: &FeatureExtractor,
    optimizer: &mut Adam,
    windows: &[FrameSequence],
    self_fed_steps: usize,
    weights: &LossWeights,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<StepOutcome> {
    let eps = draw_epsilons(model, windows.len(), self_fed_steps, rng)?;
    let mut built = build_cycle_graph(
        model,
        extractor,
        windows,
        self_fed_steps,
        weights,
        eps.as_deref(),
    )?;
    built.graph.backward(built.mean_total);
    let grads = built.bound.grads(&built.graph, model.params());
    optimizer.step(model.params_mut(), &grads);
    Ok(StepOutcome {
        per_step: built.per_step.clone(),
        mean_total: built.graph.scalar_value(built.mean_total),
    })
}

/// Gradients of one step's loss (alone) w.r.t. every parameter, computed on
/// the live cycle graph with fed-back predictions in place. Used to verify
/// the stop-gradient contract; no update is applied.
pub fn step_loss_gradients(
    model: &Predictor,
    extractor: &FeatureExtractor,
    window: &FrameSequence,
    self_fed_steps: usize,
    weights: &LossWeights,
    focus_step: usize,
) -> Result<IndexMap<String, ArrayD<f64>>> {
    if focus_step > self_fed_steps {
        return Err(Error::invalid(format!(
            "focus step {focus_step} beyond {self_fed_steps} self-fed steps"
        )));
    }
    let mut built = build_cycle_graph(
        model,
        extractor,
        std::slice::from_ref(window),
        self_fed_steps,
        weights,
        None,
    )?;
    let focus = built.step_totals[focus_step];
    built.graph.backward(focus);
    Ok(built.bound.grads(&built.graph, model.params()))
}

/// Gradients of a single supervised prediction from an explicit window of
/// `n` input frames (e.g. frozen copies of earlier predictions) against a
/// target frame. The reference side of the stop-gradient check.
pub fn single_step_gradients(
    model: &Predictor,
    extractor: &FeatureExtractor,
    inputs: &FrameSequence,
    target: &Array3<f64>,
    weights: &LossWeights,
) -> Result<IndexMap<String, ArrayD<f64>>> {
    let n = model.config().input_frames;
    if inputs.len() != n {
        return Err(Error::invalid(format!(
            "expected exactly {n} input frames, got {}",
            inputs.len()
        )));
    }
    // A window of n inputs plus the target as frame n; zero self-fed steps.
    let mut frames = Array4::zeros((
        n + 1,
        inputs.channels(),
        inputs.height(),
        inputs.width(),
    ));
    for t in 0..n {
        frames.index_axis_mut(Axis(0), t).assign(&inputs.frame(t));
    }
    frames.index_axis_mut(Axis(0), n).assign(target);
    let window = FrameSequence::new(frames, inputs.frame_interval())?;
    let mut built = build_cycle_graph(
        model,
        extractor,
        std::slice::from_ref(&window),
        0,
        weights,
        None,
    )?;
    let focus = built.step_totals[0];
    built.graph.backward(focus);
    Ok(built.bound.grads(&built.graph, model.params()))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Everything needed to continue or evaluate a run.
pub struct Checkpoint {
    pub predictor_config: PredictorConfig,
    pub params: ParamSet,
    pub optimizer: OptimizerConfig,
    pub adam_m: IndexMap<String, ArrayD<f64>>,
    pub adam_v: IndexMap<String, ArrayD<f64>>,
    pub adam_t: u64,
    /// Last completed epoch.
    pub epoch: usize,
    /// Arbitrary extra metadata (the CLI stores the resolved run config).
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Predictor,
    optimizer_config: &OptimizerConfig,
    optimizer: &Adam,
    epoch: usize,
    extra: &serde_json::Value,
) -> Result<()> {
    let metadata = serde_json::json!({
        "kind": "checkpoint",
        "epoch": epoch,
        "adam_t": optimizer.t,
        "predictor_config": model.config(),
        "optimizer": optimizer_config,
        "extra": extra,
    });
    let mut archive = Archive::new(metadata);
    for (name, value) in model.params().iter() {
        archive.insert(format!("param.{name}"), value.clone());
    }
    for (name, value) in &optimizer.m {
        archive.insert(format!("adam.m.{name}"), value.clone());
    }
    for (name, value) in &optimizer.v {
        archive.insert(format!("adam.v.{name}"), value.clone());
    }
    archive.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let archive = Archive::read(path)?;
    if archive.metadata["kind"] != "checkpoint" {
        return Err(Error::io(path, "not a checkpoint archive"));
    }
    let predictor_config: PredictorConfig =
        serde_json::from_value(archive.metadata["predictor_config"].clone())
            .map_err(|e| Error::io(path, format!("bad predictor config: {e}")))?;
    let optimizer: OptimizerConfig =
        serde_json::from_value(archive.metadata["optimizer"].clone())
            .map_err(|e| Error::io(path, format!("bad optimizer config: {e}")))?;
    let epoch = archive.metadata["epoch"]
        .as_u64()
        .ok_or_else(|| Error::io(path, "missing epoch"))? as usize;
    let adam_t = archive.metadata["adam_t"]
        .as_u64()
        .ok_or_else(|| Error::io(path, "missing adam_t"))?;

    let mut params = ParamSet::new();
    let mut adam_m = IndexMap::new();
    let mut adam_v = IndexMap::new();
    for (name, value) in &archive.arrays {
        if let Some(p) = name.strip_prefix("param.") {
            params.insert(p, value.clone());
        } else if let Some(p) = name.strip_prefix("adam.m.") {
            adam_m.insert(p.to_string(), value.clone());
        } else if let Some(p) = name.strip_prefix("adam.v.") {
            adam_v.insert(p.to_string(), value.clone());
        }
    }
    Ok(Checkpoint {
        predictor_config,
        params,
        optimizer,
        adam_m,
        adam_v,
        adam_t,
        epoch,
        extra: archive.metadata["extra"].clone(),
    })
}

// ---------------------------------------------------------------------------
// Fit
// ---------------------------------------------------------------------------

/// One metric-log row: written as newline-delimited JSON, one per epoch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub self_fed_steps: usize,
    pub reconstruction: f64,
    pub perceptual: f64,
    pub latent_kl: f64,
    pub total: f64,
    pub wall_time_s: f64,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub log_rows: Vec<EpochLog>,
    pub final_checkpoint: PathBuf,
    pub metric_log: PathBuf,
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("checkpoint_epoch{epoch:05}.fca"))
}

/// Train `model` on `dataset` for `config.epochs`, applying the cycle
/// schedule, logging one row per epoch, and checkpointing on cadence.
/// `resume_from` restarts after that checkpoint's epoch; in deterministic
/// mode the continuation matches an uninterrupted run exactly.
pub fn fit(
    model: &mut Predictor,
    extractor: &FeatureExtractor,
    dataset: &SequenceDataset,
    config: &TrainConfig,
    out_dir: &Path,
    resume_from: Option<&Path>,
    run_metadata: &serde_json::Value,
) -> Result<FitOutcome> {
    config.validate()?;
    let n = model.config().input_frames;
    let peak = config.schedule.peak_steps(config.epochs);
    let needed = n + peak + 1;
    if dataset.window_length() < needed {
        return Err(Error::config(format!(
            "dataset windows of {} frames cannot feed n={n} plus up to {peak} self-fed steps (need {needed})",
            dataset.window_length()
        )));
    }
    if dataset.total_windows() == 0 {
        return Err(Error::config("dataset has no windows"));
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("metrics.ndjson");
    let mut log_file = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?,
    );

    let mut optimizer = config.optimizer.build();
    let mut start_epoch = 0;
    if let Some(ckpt_path) = resume_from {
        let ckpt = load_checkpoint(ckpt_path)?;
        if &ckpt.predictor_config != model.config() {
            return Err(Error::config(
                "checkpoint predictor config does not match the model",
            ));
        }
        *model = Predictor::from_params(ckpt.predictor_config, &ckpt.params)?;
        optimizer = ckpt.optimizer.build();
        optimizer.m = ckpt.adam_m;
        optimizer.v = ckpt.adam_v;
        optimizer.t = ckpt.adam_t;
        start_epoch = ckpt.epoch + 1;
        if start_epoch >= config.epochs {
            return Err(Error::config(format!(
                "checkpoint is already at epoch {} of {}",
                ckpt.epoch, config.epochs
            )));
        }
    }

    // All (sequence, start) pairs; reshuffled per epoch from a derived seed.
    let mut all_windows: Vec<(usize, usize)> = Vec::new();
    for si in 0..dataset.num_sequences() {
        for start in 0..dataset.num_windows(si) {
            all_windows.push((si, start));
        }
    }

    let mut log_rows = Vec::new();
    for epoch in start_epoch..config.epochs {
        let epoch_start = std::time::Instant::now();
        let s = cycle_steps_for_epoch(&config.schedule, epoch, config.epochs)?;

        let mut order = all_windows.clone();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TAG_SHUFFLE, epoch as u64]));
        order.shuffle(&mut shuffle_rng);

        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let windows: Vec<FrameSequence> = chunk
                .iter()
                .map(|(si, st)| dataset.sample_window(*si, *st))
                .collect::<Result<_>>()?;
            let mut latent_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                &[TAG_LATENT, epoch as u64, batch_idx as u64],
            ));
            let rng = if model.config().deterministic_latent {
                None
            } else {
                Some(&mut latent_rng)
            };
            let outcome =
                training_step_batch(model, extractor, &mut optimizer, &windows, s, &config.loss, rng)?;
            let k = outcome.per_step.len() as f64;
            sums[0] += outcome.per_step.iter().map(|p| p.reconstruction).sum::<f64>() / k;
            sums[1] += outcome.per_step.iter().map(|p| p.perceptual).sum::<f64>() / k;
            sums[2] += outcome.per_step.iter().map(|p| p.latent_kl).sum::<f64>() / k;
            sums[3] += outcome.mean_total;
            batches += 1;
        }

        let wall = if config.deterministic {
            0.0
        } else {
            epoch_start.elapsed().as_secs_f64()
        };
        let row = EpochLog {
            epoch,
            self_fed_steps: s,
            reconstruction: sums[0] / batches as f64,
            perceptual: sums[1] / batches as f64,
            latent_kl: sums[2] / batches as f64,
            total: sums[3] / batches as f64,
            wall_time_s: wall,
        };
        let line = serde_json::to_string(&row)
            .map_err(|e| Error::io(&log_path, format!("log encode: {e}")))?;
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log_file.flush().map_err(|e| Error::io(&log_path, e))?;
        log_rows.push(row);

        let is_last = epoch + 1 == config.epochs;
        if is_last || (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
            save_checkpoint(
                &checkpoint_path(out_dir, epoch),
                model,
                &config.optimizer,
                &optimizer,
                epoch,
                run_metadata,
            )?;
        }
    }

    Ok(FitOutcome {
        log_rows,
        final_checkpoint: checkpoint_path(out_dir, config.epochs - 1),
        metric_log: log_path,
    })
}

/// Parse a metrics.ndjson file back into rows.
pub fn read_metric_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: EpochLog = serde_json::from_str(line)
            .map_err(|e| Error::io(path, format!("log line {}: {e}", i + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "metric log {} has no rows",
            path.display()
        )));
    }
    Ok(rows)
}
