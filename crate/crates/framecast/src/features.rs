//! Pluggable convolutional feature extractors.
//!
//! One extractor serves three consumers: the deep perceptual loss (taps at
//! every conv layer), the perceptual image metric, and the video embedder
//! behind the Fréchet video distance. Backbones are frozen; gradients flow
//! *through* them into whatever produced the input, never into their
//! weights.
//!
//! The default `tiny-conv` backbone uses seeded random fixed weights so
//! nothing here ever needs a download. `vgg11-style` / `vgg19-style`
//! topologies accept a weights file via [`WeightsSource::File`].

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array4, ArrayD, Axis, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::autodiff::{Graph, NodeId};
use crate::data::{resize_bilinear, FrameSequence};
use crate::error::{Error, Result};
use crate::losses::FeatureStack;
use crate::nn::{he_std, normal_init, ParamSet};
use rand::SeedableRng;

/// Where backbone weights come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightsSource {
    /// Seeded He-initialised weights, reproducible across processes.
    RandomFixed { seed: u64 },
    /// A weights archive written by [`FeatureExtractor::save_weights`].
    File { path: PathBuf },
}

/// Which backbone to build and which conv layers to tap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapSpec {
    pub backbone_id: String,
    /// Conv layer ids to tap, ordered shallow to deep. Must be a subset of
    /// the backbone's conv layers in backbone order.
    pub tap_layers: Vec<String>,
    /// Apply the per-channel normalization declared by the weights file.
    pub normalize_input: bool,
    pub weights_source: WeightsSource,
}

impl TapSpec {
    /// Desk-scale default: tap every conv layer of `tiny-conv`.
    pub fn tiny(seed: u64) -> Self {
        TapSpec {
            backbone_id: "tiny-conv".into(),
            tap_layers: vec!["conv1".into(), "conv2".into(), "conv3".into(), "conv4".into()],
            normalize_input: false,
            weights_source: WeightsSource::RandomFixed { seed },
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Activation {
    Elu,
    Relu,
}

#[derive(Clone)]
enum LayerDef {
    Conv {
        id: String,
        out_ch: usize,
        kernel: usize,
        bias: bool,
        activation: Activation,
    },
    AvgPool,
    MaxPool,
}

struct BackboneDef {
    layers: Vec<LayerDef>,
    min_size: usize,
}

fn conv(id: &str, out_ch: usize, kernel: usize, bias: bool, activation: Activation) -> LayerDef {
    LayerDef::Conv {
        id: id.into(),
        out_ch,
        kernel,
        bias,
        activation,
    }
}

/// `in_channels` fixes the stem width of `tiny-conv`; VGG-style tables are
/// channel-agnostic in their first conv.
fn backbone_def(backbone_id: &str, in_channels: usize) -> Result<BackboneDef> {
    let def = match backbone_id {
        // Bias-free so an all-zero input produces all-zero features; ELU so
        // nonnegative inputs pass the identity stem unchanged.
        "tiny-conv" => BackboneDef {
            layers: vec![
                conv("conv1", in_channels, 1, false, Activation::Elu),
                conv("conv2", 16, 3, false, Activation::Elu),
                LayerDef::AvgPool,
                conv("conv3", 32, 3, false, Activation::Elu),
                LayerDef::AvgPool,
                conv("conv4", 32, 3, false, Activation::Elu),
            ],
            min_size: 8,
        },
        "vgg11-style" => {
            let cfg = [(64, 1), (128, 1), (256, 2), (512, 2), (512, 2)];
            BackboneDef {
                layers: vgg_layers(&cfg),
                min_size: 32,
            }
        }
        "vgg19-style" => {
            let cfg = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)];
            BackboneDef {
                layers: vgg_layers(&cfg),
                min_size: 32,
            }
        }
        other => {
            return Err(Error::config(format!("unknown backbone id {other:?}")));
        }
    };
    Ok(def)
}

fn vgg_layers(blocks: &[(usize, usize)]) -> Vec<LayerDef> {
    let mut layers = Vec::new();
    let mut idx = 1;
    for (width, count) in blocks {
        for _ in 0..*count {
            layers.push(conv(
                &format!("conv{idx}"),
                *width,
                3,
                true,
                Activation::Relu,
            ));
            idx += 1;
        }
        layers.push(LayerDef::MaxPool);
    }
    layers
}

/// A frozen convolutional backbone with named taps. Immutable after
/// construction; concurrent read-only use is safe.
pub struct FeatureExtractor {
    spec: TapSpec,
    layers: Vec<LayerDef>,
    params: ParamSet,
    normalization: Option<(Vec<f64>, Vec<f64>)>,
    in_channels: usize,
    min_size: usize,
    pool_divisor: usize,
}

impl FeatureExtractor {
    pub fn new(spec: TapSpec, in_channels: usize) -> Result<Self> {
        let def = backbone_def(&spec.backbone_id, in_channels)?;

        let conv_ids: Vec<&str> = def
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerDef::Conv { id, .. } => Some(id.as_str()),
                _ => None,
            })
            .collect();
        if spec.tap_layers.is_empty() {
            return Err(Error::config("tap_layers must be nonempty"));
        }
        let mut last_pos = None;
        for tap in &spec.tap_layers {
            let pos = conv_ids
                .iter()
                .position(|id| id == tap)
                .ok_or_else(|| {
                    Error::config(format!(
                        "tap layer {tap:?} not in backbone {:?} (has {conv_ids:?})",
                        spec.backbone_id
                    ))
                })?;
            if let Some(prev) = last_pos {
                if pos <= prev {
                    return Err(Error::config(
                        "tap_layers must be ordered shallow to deep without repeats",
                    ));
                }
            }
            last_pos = Some(pos);
        }

        let mut params = ParamSet::new();
        let mut normalization = None;
        match &spec.weights_source {
            WeightsSource::RandomFixed { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                init_params(&def.layers, in_channels, &mut params, &mut rng);
            }
            WeightsSource::File { path } => {
                let archive = Archive::read(path)?;
                let meta = &archive.metadata;
                if meta["backbone_id"] != spec.backbone_id.as_str() {
                    return Err(Error::config(format!(
                        "weights file is for backbone {:?}, spec wants {:?}",
                        meta["backbone_id"], spec.backbone_id
                    )));
                }
                load_params(&def.layers, in_channels, &archive, &mut params)?;
                if let Some(norm) = meta.get("normalization").filter(|v| !v.is_null()) {
                    let parse = |key: &str| -> Result<Vec<f64>> {
                        norm[key]
                            .as_array()
                            .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
                            .ok_or_else(|| Error::config("malformed normalization record"))
                    };
                    let mean = parse("mean")?;
                    let std = parse("std")?;
                    if mean.len() != in_channels || std.len() != in_channels {
                        return Err(Error::config(
                            "normalization constants do not match input channels",
                        ));
                    }
                    if std.iter().any(|s| *s <= 0.0) {
                        return Err(Error::config("normalization std must be positive"));
                    }
                    normalization = Some((mean, std));
                }
            }
        }
        if spec.normalize_input && normalization.is_none() {
            return Err(Error::config(
                "normalize_input requires a weights file that declares normalization constants",
            ));
        }

        let pools = def
            .layers
            .iter()
            .filter(|l| matches!(l, LayerDef::AvgPool | LayerDef::MaxPool))
            .count();
        Ok(FeatureExtractor {
            spec,
            layers: def.layers,
            params,
            normalization,
            in_channels,
            min_size: def.min_size,
            pool_divisor: 1 << pools,
        })
    }

    pub fn spec(&self) -> &TapSpec {
        &self.spec
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Channel count of each tap, in tap order.
    pub fn tap_channels(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for tap in &self.spec.tap_layers {
            for layer in &self.layers {
                if let LayerDef::Conv { id, out_ch, .. } = layer {
                    if id == tap {
                        out.push(*out_ch);
                    }
                }
            }
        }
        out
    }

    /// Direct access to the frozen weights (tests overwrite them to build
    /// exact scenarios).
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Smallest accepted input side length for the graph path.
    pub fn min_size(&self) -> usize {
        self.min_size
    }

    /// Trace the backbone over `x` (a (B,C,H,W) node already in `g`),
    /// returning `(layer_id, node)` for each tap layer. Weights enter the
    /// graph as constants: gradients pass through to `x` but are never
    /// collected for the backbone.
    pub fn forward_graph(&self, g: &mut Graph, x: NodeId) -> Result<Vec<(String, NodeId)>> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::invalid(format!(
                "backbone expects (B,{},H,W), got {shape:?}",
                self.in_channels
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        if h < self.min_size || w < self.min_size {
            return Err(Error::invalid(format!(
                "input {h}x{w} below backbone minimum {}; resize first",
                self.min_size
            )));
        }
        if h % self.pool_divisor != 0 || w % self.pool_divisor != 0 {
            return Err(Error::invalid(format!(
                "input {h}x{w} must be divisible by {}",
                self.pool_divisor
            )));
        }

        let mut cur = x;
        if let Some((mean, std)) = self.normalization.as_ref().filter(|_| self.spec.normalize_input) {
            cur = self.normalize_node(g, cur, mean, std);
        }
        let mut taps = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerDef::Conv {
                    id,
                    kernel,
                    bias,
                    activation,
                    ..
                } => {
                    let wname = format!("{id}.w");
                    let weight = g.leaf(self.params.get(&wname).clone());
                    let b = if *bias {
                        Some(g.leaf(self.params.get(&format!("{id}.b")).clone()))
                    } else {
                        None
                    };
                    let pad = kernel / 2;
                    let y = g.conv2d(cur, weight, b, 1, pad);
                    cur = match activation {
                        Activation::Elu => g.elu(y),
                        Activation::Relu => g.relu(y),
                    };
                    if self.spec.tap_layers.iter().any(|t| t == id) {
                        taps.push((id.clone(), cur));
                    }
                }
                LayerDef::AvgPool => cur = g.avg_pool2(cur),
                LayerDef::MaxPool => cur = g.max_pool2(cur),
            }
        }
        Ok(taps)
    }

    /// Per-channel (x - mean) / std as a constant 1x1 conv.
    fn normalize_node(&self, g: &mut Graph, x: NodeId, mean: &[f64], std: &[f64]) -> NodeId {
        let c = self.in_channels;
        let mut w = ArrayD::zeros(IxDyn(&[c, c, 1, 1]));
        let mut b = ArrayD::zeros(IxDyn(&[c]));
        for i in 0..c {
            w[[i, i, 0, 0]] = 1.0 / std[i];
            b[[i]] = -mean[i] / std[i];
        }
        let w = g.leaf(w);
        let b = g.leaf(b);
        g.conv2d(x, w, Some(b), 1, 0)
    }

    /// Post-activation features at every tap layer, one stack per image.
    /// Inputs smaller than the backbone minimum (or not pool-divisible) are
    /// bilinearly resized up first.
    pub fn extract_features(&self, images: &Array4<f64>) -> Result<Vec<FeatureStack>> {
        let (b, c, h, w) = (
            images.shape()[0],
            images.shape()[1],
            images.shape()[2],
            images.shape()[3],
        );
        if b == 0 {
            return Err(Error::invalid("empty image batch"));
        }
        if c != self.in_channels {
            return Err(Error::invalid(format!(
                "backbone expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let round_up = |v: usize| {
            let v = v.max(self.min_size);
            v.div_ceil(self.pool_divisor) * self.pool_divisor
        };
        let (rh, rw) = (round_up(h), round_up(w));
        let input = if (rh, rw) == (h, w) {
            images.clone()
        } else {
            let mut resized = Array4::zeros((b, c, rh, rw));
            for i in 0..b {
                let frame = resize_bilinear(&images.index_axis(Axis(0), i), rh, rw);
                resized.index_axis_mut(Axis(0), i).assign(&frame);
            }
            resized
        };

        let mut g = Graph::new();
        let x = g.leaf(input.into_dyn());
        let taps = self.forward_graph(&mut g, x)?;
        let mut stacks = Vec::with_capacity(b);
        for i in 0..b {
            let mut layers = Vec::with_capacity(taps.len());
            for (id, node) in &taps {
                let v = g.value(*node);
                let per_image = v
                    .index_axis(Axis(0), i)
                    .to_owned()
                    .into_dimensionality::<ndarray::Ix3>()
                    .expect("tap is (B,C,H,W)");
                layers.push((id.clone(), per_image));
            }
            stacks.push(FeatureStack::new(layers)?);
        }
        Ok(stacks)
    }

    /// Write weights plus metadata so [`WeightsSource::File`] can rebuild
    /// this extractor exactly.
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let normalization = match &self.normalization {
            Some((mean, std)) => serde_json::json!({"mean": mean, "std": std}),
            None => serde_json::Value::Null,
        };
        let mut archive = Archive::new(serde_json::json!({
            "kind": "feature-weights",
            "backbone_id": self.spec.backbone_id,
            "in_channels": self.in_channels,
            "normalization": normalization,
        }));
        for (name, value) in self.params.iter() {
            archive.insert(name, value.clone());
        }
        archive.write(path)
    }
}

fn conv_shapes(layers: &[LayerDef], in_channels: usize) -> Vec<(String, [usize; 4], bool)> {
    let mut shapes = Vec::new();
    let mut cur = in_channels;
    for layer in layers {
        if let LayerDef::Conv {
            id,
            out_ch,
            kernel,
            bias,
            ..
        } = layer
        {
            shapes.push((id.clone(), [*out_ch, cur, *kernel, *kernel], *bias));
            cur = *out_ch;
        }
    }
    shapes
}

fn init_params(
    layers: &[LayerDef],
    in_channels: usize,
    params: &mut ParamSet,
    rng: &mut ChaCha8Rng,
) {
    for (id, shape, bias) in conv_shapes(layers, in_channels) {
        let fan_in = shape[1] * shape[2] * shape[3];
        params.insert(format!("{id}.w"), normal_init(&shape, he_std(fan_in), rng));
        if bias {
            params.insert(format!("{id}.b"), ArrayD::zeros(IxDyn(&[shape[0]])));
        }
    }
}

fn load_params(
    layers: &[LayerDef],
    in_channels: usize,
    archive: &Archive,
    params: &mut ParamSet,
) -> Result<()> {
    for (id, shape, bias) in conv_shapes(layers, in_channels) {
        let wname = format!("{id}.w");
        let w = archive.get(&wname)?;
        if w.shape() != shape {
            return Err(Error::config(format!(
                "weights file: {wname} has shape {:?}, expected {shape:?}",
                w.shape()
            )));
        }
        params.insert(wname, w.clone());
        if bias {
            let bname = format!("{id}.b");
            let b = archive.get(&bname)?;
            if b.shape() != [shape[0]] {
                return Err(Error::config(format!(
                    "weights file: {bname} has shape {:?}, expected [{}]",
                    b.shape(),
                    shape[0]
                )));
            }
            params.insert(bname, b.clone());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Video embedding
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalPooling {
    Mean,
    Max,
}

/// Maps a whole sequence to one fixed-length vector: per-frame backbone
/// features, spatially averaged per tap, concatenated across taps, then
/// pooled over time.
pub struct VideoEmbedder {
    extractor: FeatureExtractor,
    pooling: TemporalPooling,
    output_dim: usize,
}

impl VideoEmbedder {
    pub fn new(extractor: FeatureExtractor, pooling: TemporalPooling) -> Self {
        let output_dim = extractor.tap_channels().iter().sum();
        VideoEmbedder {
            extractor,
            pooling,
            output_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Identifier recorded next to every score computed with this embedder.
    pub fn id(&self) -> String {
        let pooling = match self.pooling {
            TemporalPooling::Mean => "mean",
            TemporalPooling::Max => "max",
        };
        format!(
            "{}[{}]/{pooling}",
            self.extractor.spec().backbone_id,
            self.extractor.spec().tap_layers.join("+")
        )
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    /// Fixed-length embedding of a sequence; frames form the batch axis of
    /// one backbone pass.
    pub fn embed_video(&self, seq: &FrameSequence) -> Result<Array1<f64>> {
        let stacks = self.extractor.extract_features(seq.frames())?;
        let mut per_frame: Vec<Array1<f64>> = Vec::with_capacity(stacks.len());
        for stack in &stacks {
            let mut v = Array1::zeros(self.output_dim);
            let mut offset = 0;
            for (_, features) in stack.layers() {
                let c = features.shape()[0];
                let hw = (features.shape()[1] * features.shape()[2]) as f64;
                for ci in 0..c {
                    v[offset + ci] = features.index_axis(Axis(0), ci).sum() / hw;
                }
                offset += c;
            }
            per_frame.push(v);
        }
        let mut out = per_frame[0].clone();
        match self.pooling {
            TemporalPooling::Mean => {
                for v in &per_frame[1..] {
                    out += v;
                }
                out /= per_frame.len() as f64;
            }
            TemporalPooling::Max => {
                for v in &per_frame[1..] {
                    for (o, x) in out.iter_mut().zip(v.iter()) {
                        *o = o.max(*x);
                    }
                }
            }
        }
        Ok(out)
    }
}
