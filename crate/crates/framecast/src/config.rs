//! Declarative run configuration: one TOML file describes the model, the
//! objective, the data, the curriculum, and the evaluation. Unknown keys are
//! hard errors so a typo can never silently change an experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    derive_seed, load_directory_dataset, make_synthetic_dataset, ColorMode, DirectoryLayout,
    RescaleMode, SequenceDataset, SyntheticSpec, TransformSpec,
};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, TapSpec, TemporalPooling, VideoEmbedder};
use crate::losses::LossWeights;
use crate::predictor::{Predictor, PredictorConfig, SkipConfig, SkipKind};
use crate::training::{CycleSchedule, OptimizerConfig, TrainConfig};

// Seed-stream tags for the run-level master seed.
const TAG_MODEL_INIT: u64 = 10;
const TAG_CROP: u64 = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    Directory,
}

/// The `[dataset]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    /// Root directory for `kind = "directory"`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Frame decoding for directory datasets.
    #[serde(default = "default_color")]
    pub color: ColorMode,
    /// Sprite generator for `kind = "synthetic"`.
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "default_rescale")]
    pub rescale: RescaleMode,
    #[serde(default)]
    pub random_crop: bool,
}

fn default_color() -> ColorMode {
    ColorMode::Gray
}

fn default_rescale() -> RescaleMode {
    RescaleMode::ShorterSide
}

/// The `[training]` section (seed, determinism, and loss weights live at
/// the top level / `[loss]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: CycleSchedule,
    pub checkpoint_every: usize,
}

/// The `[metrics]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub horizons: Vec<usize>,
    pub temporal_pooling: TemporalPooling,
}

/// The whole experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Bitwise-reproducible mode: zeroed wall times, deterministic latents.
    pub deterministic: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub predictor: PredictorConfig,
    pub training: TrainSection,
    pub loss: LossWeights,
    pub features: TapSpec,
    pub dataset: DatasetSection,
    pub metrics: MetricsSection,
}

impl RunConfig {
    /// Desk-scale default: synthetic sprites at 32x32, n=4, attention skip.
    pub fn desk_default() -> Self {
        RunConfig {
            seed: 0,
            deterministic: true,
            out_dir: None,
            predictor: PredictorConfig {
                input_frames: 4,
                channels: 1,
                height: 32,
                width: 32,
                stage_widths: vec![16, 24, 32],
                latent_dim: 16,
                skip: SkipConfig {
                    kind: SkipKind::Attention,
                    resolutions: vec![16],
                    heads: 1,
                    qk_dim: 16,
                },
                deterministic_latent: true,
            },
            training: TrainSection {
                epochs: 20,
                batch_size: 4,
                optimizer: OptimizerConfig::default(),
                schedule: CycleSchedule::for_input_frames(4),
                checkpoint_every: 10,
            },
            loss: LossWeights::default(),
            features: TapSpec::tiny(7),
            dataset: DatasetSection {
                kind: DatasetKind::Synthetic,
                root: None,
                color: ColorMode::Gray,
                synthetic: Some(SyntheticSpec {
                    num_sequences: 8,
                    length: 30,
                    size: 32,
                    channels: 1,
                    num_sprites: 2,
                    max_speed: 2,
                    seed: 1,
                }),
                rescale: RescaleMode::ShorterSide,
                random_crop: false,
            },
            metrics: MetricsSection {
                horizons: vec![10, 50],
                temporal_pooling: TemporalPooling::Mean,
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config encode: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// Structural checks plus existence of every referenced path.
    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        self.loss.validate()?;
        self.training.optimizer.validate()?;
        self.training.schedule.validate()?;
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if self.metrics.horizons.is_empty() || self.metrics.horizons.contains(&0) {
            return Err(Error::config("metrics.horizons must be nonempty and positive"));
        }
        match self.dataset.kind {
            DatasetKind::Synthetic => {
                let spec = self.dataset.synthetic.as_ref().ok_or_else(|| {
                    Error::config("dataset.kind = synthetic needs a [dataset.synthetic] table")
                })?;
                if spec.channels != self.predictor.channels {
                    return Err(Error::config(format!(
                        "synthetic channels {} != predictor channels {}",
                        spec.channels, self.predictor.channels
                    )));
                }
            }
            DatasetKind::Directory => {
                let root = self.dataset.root.as_ref().ok_or_else(|| {
                    Error::config("dataset.kind = directory needs dataset.root")
                })?;
                if !root.is_dir() {
                    return Err(Error::config(format!(
                        "dataset root {} does not exist",
                        root.display()
                    )));
                }
                if self.dataset.color.channels() != self.predictor.channels {
                    return Err(Error::config(format!(
                        "dataset color gives {} channels, predictor wants {}",
                        self.dataset.color.channels(),
                        self.predictor.channels
                    )));
                }
            }
        }
        if let crate::features::WeightsSource::File { path } = &self.features.weights_source {
            if !path.is_file() {
                return Err(Error::config(format!(
                    "feature weights file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Training window length: n input frames, the deepest self-feed the
    /// schedule can reach, and one target per step.
    pub fn window_length(&self) -> usize {
        self.predictor.input_frames + self.training.schedule.max_self_fed_steps + 1
    }

    pub fn transform(&self) -> TransformSpec {
        TransformSpec {
            target_height: self.predictor.height,
            target_width: self.predictor.width,
            rescale: self.dataset.rescale,
            random_crop: self.dataset.random_crop,
            crop_seed: derive_seed(self.seed, &[TAG_CROP]),
        }
    }

    pub fn build_dataset(&self) -> Result<SequenceDataset> {
        let transform = self.transform();
        match self.dataset.kind {
            DatasetKind::Synthetic => {
                let spec = self
                    .dataset
                    .synthetic
                    .as_ref()
                    .ok_or_else(|| Error::config("missing [dataset.synthetic]"))?;
                make_synthetic_dataset(spec, self.window_length(), transform)
            }
            DatasetKind::Directory => {
                let root = self
                    .dataset
                    .root
                    .as_ref()
                    .ok_or_else(|| Error::config("missing dataset.root"))?;
                load_directory_dataset(
                    root,
                    DirectoryLayout {
                        color: self.dataset.color,
                    },
                    self.window_length(),
                    transform,
                )
            }
        }
    }

    pub fn build_extractor(&self) -> Result<FeatureExtractor> {
        FeatureExtractor::new(self.features.clone(), self.predictor.channels)
    }

    pub fn build_embedder(&self) -> Result<VideoEmbedder> {
        Ok(VideoEmbedder::new(
            self.build_extractor()?,
            self.metrics.temporal_pooling,
        ))
    }

    pub fn build_model(&self) -> Result<Predictor> {
        let mut cfg = self.predictor.clone();
        if self.deterministic {
            cfg.deterministic_latent = true;
        }
        Predictor::new(cfg, derive_seed(self.seed, &[TAG_MODEL_INIT]))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            optimizer: self.training.optimizer.clone(),
            loss: self.loss,
            schedule: self.training.schedule.clone(),
            seed: self.seed,
            checkpoint_every: self.training.checkpoint_every,
            deterministic: self.deterministic,
        }
    }
}
