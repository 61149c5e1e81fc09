//! The next-frame predictor: a residual conv encoder over channel-stacked
//! input frames, a variational bottleneck, and an upsampling decoder that
//! can pull encoder features through residual or attention skip blocks.
//! The output head emits a per-pixel Gaussian (mean bounded to `[0,1]` by a
//! sigmoid, log-variance clamped), so raw network output always satisfies
//! the [`GaussianImage`] invariants.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::losses::{GaussianImage, LOG_VARIANCE_MAX, LOG_VARIANCE_MIN};
use crate::nn::{he_std, normal_init, Bound, Conv2d, Linear, ParamSet};

/// Skip connection flavour between encoder and decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipKind {
    None,
    Residual,
    Attention,
}

/// Where and how the decoder taps the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipConfig {
    pub kind: SkipKind,
    /// Decoder spatial heights receiving a skip (e.g. `[16]` or `[16, 32]`).
    pub resolutions: Vec<usize>,
    pub heads: usize,
    /// Total query/key width across heads.
    pub qk_dim: usize,
}

impl Default for SkipConfig {
    fn default() -> Self {
        SkipConfig {
            kind: SkipKind::Attention,
            resolutions: vec![16],
            heads: 1,
            qk_dim: 16,
        }
    }
}

/// Static description of the predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    /// Number of conditioning frames `n`.
    pub input_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Widths per encoder stage: `[stem, stage1, ..., stageK]` with K
    /// downsampling steps of factor 2.
    pub stage_widths: Vec<usize>,
    pub latent_dim: usize,
    pub skip: SkipConfig,
    /// When set, the latent sample is its mean everywhere.
    pub deterministic_latent: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            input_frames: 6,
            channels: 3,
            height: 64,
            width: 64,
            stage_widths: vec![32, 48, 64, 96],
            latent_dim: 128,
            skip: SkipConfig::default(),
            deterministic_latent: true,
        }
    }
}

impl PredictorConfig {
    /// Number of downsampling stages.
    pub fn depth(&self) -> usize {
        self.stage_widths.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_frames == 0 || self.channels == 0 || self.latent_dim == 0 {
            return Err(Error::config("input_frames, channels, latent_dim must be positive"));
        }
        if self.stage_widths.len() < 2 {
            return Err(Error::config(
                "stage_widths needs a stem width plus at least one stage",
            ));
        }
        if self.stage_widths.iter().any(|w| *w == 0) {
            return Err(Error::config("stage widths must be positive"));
        }
        let k = self.depth();
        if self.height % (1 << k) != 0 || self.width % (1 << k) != 0 {
            return Err(Error::config(format!(
                "{}x{} not divisible by 2^{k}",
                self.height, self.width
            )));
        }
        if self.skip.heads == 0 {
            return Err(Error::config("attention heads must be >= 1"));
        }
        if self.skip.qk_dim == 0 || self.skip.qk_dim % self.skip.heads != 0 {
            return Err(Error::config(format!(
                "qk_dim {} must be a positive multiple of heads {}",
                self.skip.qk_dim, self.skip.heads
            )));
        }
        let valid: Vec<usize> = (0..k).map(|i| self.height >> i).collect();
        for r in &self.skip.resolutions {
            if !valid.contains(r) {
                return Err(Error::config(format!(
                    "skip resolution {r} not produced by the decoder (valid: {valid:?})"
                )));
            }
        }
        Ok(())
    }

    fn deepest(&self) -> (usize, usize, usize) {
        let k = self.depth();
        (
            *self.stage_widths.last().unwrap(),
            self.height >> k,
            self.width >> k,
        )
    }
}

/// Variational latent for one input window.
#[derive(Clone, Debug)]
pub struct LatentSample {
    pub mean: Array1<f64>,
    pub log_variance: Array1<f64>,
    pub sample: Array1<f64>,
}

/// Decoder-side attention over same-resolution encoder features.
/// All projections are bias-free 1x1 convs; the output projection feeds an
/// additive residual path, so zeroing it reduces the block to the identity.
pub struct AttentionSkip {
    name: String,
    pub dec_channels: usize,
    pub enc_channels: usize,
    pub heads: usize,
    /// Per-head query/key/value width.
    pub head_dim: usize,
}

impl AttentionSkip {
    pub fn new(
        name: impl Into<String>,
        dec_channels: usize,
        enc_channels: usize,
        heads: usize,
        qk_dim: usize,
    ) -> Self {
        assert!(heads >= 1 && qk_dim % heads == 0);
        AttentionSkip {
            name: name.into(),
            dec_channels,
            enc_channels,
            heads,
            head_dim: qk_dim / heads,
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        for h in 0..self.heads {
            params.insert(
                format!("{}.q{h}.w", self.name),
                normal_init(
                    &[self.head_dim, self.dec_channels, 1, 1],
                    he_std(self.dec_channels),
                    rng,
                ),
            );
            params.insert(
                format!("{}.k{h}.w", self.name),
                normal_init(
                    &[self.head_dim, self.enc_channels, 1, 1],
                    he_std(self.enc_channels),
                    rng,
                ),
            );
            params.insert(
                format!("{}.v{h}.w", self.name),
                normal_init(
                    &[self.head_dim, self.enc_channels, 1, 1],
                    he_std(self.enc_channels),
                    rng,
                ),
            );
        }
        params.insert(
            format!("{}.out.w", self.name),
            normal_init(
                &[self.dec_channels, self.heads * self.head_dim, 1, 1],
                he_std(self.heads * self.head_dim),
                rng,
            ),
        );
    }

    /// Returns the block output and the per-head attention weight nodes,
    /// each (B, R^2, R^2) and row-stochastic over the last axis.
    pub fn forward_with_attention(
        &self,
        g: &mut Graph,
        bound: &Bound,
        dec: NodeId,
        enc: NodeId,
    ) -> (NodeId, Vec<NodeId>) {
        let dshape = g.value(dec).shape().to_vec();
        let eshape = g.value(enc).shape().to_vec();
        assert_eq!(&dshape[2..], &eshape[2..], "skip resolution mismatch");
        let (b, h, w) = (dshape[0], dshape[2], dshape[3]);
        let hw = h * w;
        let scale = 1.0 / (self.head_dim as f64).sqrt();

        let mut head_outputs = Vec::with_capacity(self.heads);
        let mut attentions = Vec::with_capacity(self.heads);
        for hd in 0..self.heads {
            let wq = bound.id(&format!("{}.q{hd}.w", self.name));
            let wk = bound.id(&format!("{}.k{hd}.w", self.name));
            let wv = bound.id(&format!("{}.v{hd}.w", self.name));

            let q = g.conv2d(dec, wq, None, 1, 0); // (B, dk, H, W)
            let q = g.reshape(q, &[b, self.head_dim, hw]);
            let q = g.permute021(q); // (B, HW, dk)

            let k = g.conv2d(enc, wk, None, 1, 0);
            let k = g.reshape(k, &[b, self.head_dim, hw]); // (B, dk, HW)

            let logits = g.bmm(q, k); // (B, HW_q, HW_kv)
            let logits = g.mul_scalar(logits, scale);
            let attn = g.softmax_last(logits);
            attentions.push(attn);

            let v = g.conv2d(enc, wv, None, 1, 0);
            let v = g.reshape(v, &[b, self.head_dim, hw]);
            let v = g.permute021(v); // (B, HW, dk)

            let ctx = g.bmm(attn, v); // (B, HW, dk)
            let ctx = g.permute021(ctx); // (B, dk, HW)
            let ctx = g.reshape(ctx, &[b, self.head_dim, h, w]);
            head_outputs.push(ctx);
        }
        let stacked = if head_outputs.len() == 1 {
            head_outputs[0]
        } else {
            g.concat_channels(&head_outputs)
        };
        let wo = bound.id(&format!("{}.out.w", self.name));
        let projected = g.conv2d(stacked, wo, None, 1, 0);
        (g.add(dec, projected), attentions)
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, dec: NodeId, enc: NodeId) -> NodeId {
        self.forward_with_attention(g, bound, dec, enc).0
    }
}

struct ResBlock {
    c1: Conv2d,
    c2: Conv2d,
}

impl ResBlock {
    fn new(name: &str, width: usize) -> Self {
        ResBlock {
            c1: Conv2d::new(format!("{name}.c1"), width, width, 3),
            c2: Conv2d::new(format!("{name}.c2"), width, width, 3),
        }
    }

    fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        self.c1.init(params, rng);
        self.c2.init(params, rng);
    }

    fn forward(&self, g: &mut Graph, bound: &Bound, x: NodeId) -> NodeId {
        let y = self.c1.forward(g, bound, x);
        let y = g.elu(y);
        let y = self.c2.forward(g, bound, y);
        let s = g.add(x, y);
        g.elu(s)
    }
}

enum SkipLayer {
    Residual { proj: Conv2d },
    Attention(AttentionSkip),
}

struct DecoderStage {
    up: Conv2d,
    skip: Option<SkipLayer>,
    res: ResBlock,
    /// Spatial height this stage produces.
    resolution: usize,
}

/// Intermediate node handles for one forward pass.
pub(crate) struct ForwardNodes {
    pub pyramid: Vec<(usize, NodeId)>,
    pub latent_mean: NodeId,
    pub latent_logvar: NodeId,
    pub latent_sample: NodeId,
    pub mean: NodeId,
    pub log_variance: NodeId,
}

/// The trainable model: configuration plus named parameters. Weights are
/// read-only during inference; training owns a `&mut` and is the single
/// writer.
pub struct Predictor {
    config: PredictorConfig,
    params: ParamSet,
    enc_stem: Conv2d,
    enc_stages: Vec<(Conv2d, ResBlock)>,
    lat_mean: Linear,
    lat_logvar: Linear,
    dec_inject: Conv2d,
    dec_res_deep: ResBlock,
    dec_stages: Vec<DecoderStage>,
    head_mean: Conv2d,
    head_logvar: Conv2d,
}

impl Predictor {
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let widths = &config.stage_widths;
        let k = config.depth();

        let enc_stem = Conv2d::new(
            "enc.stem",
            config.input_frames * config.channels,
            widths[0],
            3,
        );
        enc_stem.init(&mut params, &mut rng);

        let mut enc_stages = Vec::new();
        for i in 1..=k {
            let down = Conv2d::new(format!("enc.down{i}"), widths[i - 1], widths[i], 3).stride(2);
            down.init(&mut params, &mut rng);
            let res = ResBlock::new(&format!("enc.res{i}"), widths[i]);
            res.init(&mut params, &mut rng);
            enc_stages.push((down, res));
        }

        let (deep_w, deep_h, deep_wd) = config.deepest();
        let lat_mean = Linear::new("lat.mean", deep_w, config.latent_dim);
        lat_mean.init(&mut params, &mut rng);
        let lat_logvar = Linear::new("lat.logvar", deep_w, config.latent_dim);
        lat_logvar.init(&mut params, &mut rng);

        // Learned decoder seed map: gives the latent broadcast a spatially
        // varying canvas to modulate.
        params.insert(
            "dec.seed",
            normal_init(&[deep_w, deep_h, deep_wd], 0.1, &mut rng),
        );
        let dec_inject = Conv2d::new("dec.inject", deep_w + config.latent_dim, deep_w, 1);
        dec_inject.init(&mut params, &mut rng);
        let dec_res_deep = ResBlock::new("dec.res_deep", deep_w);
        dec_res_deep.init(&mut params, &mut rng);

        let mut dec_stages = Vec::new();
        for i in (1..=k).rev() {
            let out_res = config.height >> (i - 1);
            let up = Conv2d::new(format!("dec.up{i}"), widths[i], widths[i - 1], 3);
            up.init(&mut params, &mut rng);
            let skip = if config.skip.resolutions.contains(&out_res) {
                match config.skip.kind {
                    SkipKind::None => None,
                    SkipKind::Residual => {
                        let proj = Conv2d::new(
                            format!("dec.skip{out_res}.proj"),
                            widths[i - 1],
                            widths[i - 1],
                            1,
                        )
                        .no_bias();
                        proj.init(&mut params, &mut rng);
                        Some(SkipLayer::Residual { proj })
                    }
                    SkipKind::Attention => {
                        let attn = AttentionSkip::new(
                            format!("dec.skip{out_res}"),
                            widths[i - 1],
                            widths[i - 1],
                            config.skip.heads,
                            config.skip.qk_dim,
                        );
                        attn.init(&mut params, &mut rng);
                        Some(SkipLayer::Attention(attn))
                    }
                }
            } else {
                None
            };
            let res = ResBlock::new(&format!("dec.res{}", i - 1), widths[i - 1]);
            res.init(&mut params, &mut rng);
            dec_stages.push(DecoderStage {
                up,
                skip,
                res,
                resolution: out_res,
            });
        }

        let head_mean = Conv2d::new("head.mean", widths[0], config.channels, 3);
        head_mean.init(&mut params, &mut rng);
        let head_logvar = Conv2d::new("head.logvar", widths[0], config.channels, 3);
        head_logvar.init(&mut params, &mut rng);

        Ok(Predictor {
            config,
            params,
            enc_stem,
            enc_stages,
            lat_mean,
            lat_logvar,
            dec_inject,
            dec_res_deep,
            dec_stages,
            head_mean,
            head_logvar,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Rebuild a predictor from stored parameters, validating every shape.
    pub fn from_params(config: PredictorConfig, stored: &ParamSet) -> Result<Self> {
        let mut fresh = Predictor::new(config, 0)?;
        let expected: Vec<String> = fresh.params.names().map(String::from).collect();
        if stored.len() != expected.len() {
            return Err(Error::config(format!(
                "parameter count mismatch: stored {} vs expected {}",
                stored.len(),
                expected.len()
            )));
        }
        for name in &expected {
            let value = stored
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::config(format!("checkpoint missing parameter {name}")))?;
            if value.shape() != fresh.params.get(name).shape() {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    fresh.params.get(name).shape()
                )));
            }
            fresh.params.set(name, value.clone());
        }
        Ok(fresh)
    }

    fn check_input_window(&self, seq: &FrameSequence) -> Result<()> {
        let c = &self.config;
        if seq.len() != c.input_frames {
            return Err(Error::invalid(format!(
                "expected {} input frames, got {}",
                c.input_frames,
                seq.len()
            )));
        }
        if seq.channels() != c.channels || seq.height() != c.height || seq.width() != c.width {
            return Err(Error::invalid(format!(
                "expected frames of {}x{}x{}, got {}x{}x{}",
                c.channels,
                c.height,
                c.width,
                seq.channels(),
                seq.height(),
                seq.width()
            )));
        }
        Ok(())
    }

    /// Channel-stack a window into the (1, n*C, H, W) encoder input.
    pub(crate) fn stack_window(&self, seq: &FrameSequence) -> Result<ArrayD<f64>> {
        self.check_input_window(seq)?;
        let c = &self.config;
        let stacked = seq
            .frames()
            .clone()
            .into_shape_with_order((
                1,
                c.input_frames * c.channels,
                c.height,
                c.width,
            ))
            .expect("frames are standard layout");
        Ok(stacked.into_dyn())
    }

    /// Trace encoder + decoder over `input`, a (B, n*C, H, W) node.
    /// `epsilon` supplies the reparameterization noise per batch row; `None`
    /// means deterministic (sample = mean).
    pub(crate) fn forward_nodes(
        &self,
        g: &mut Graph,
        bound: &Bound,
        input: NodeId,
        epsilon: Option<&Array2<f64>>,
    ) -> ForwardNodes {
        let cfg = &self.config;
        let batch = g.value(input).shape()[0];

        // Encoder.
        let mut cur = self.enc_stem.forward(g, bound, input);
        cur = g.elu(cur);
        let mut pyramid = vec![(cfg.height, cur)];
        for (i, (down, res)) in self.enc_stages.iter().enumerate() {
            let y = down.forward(g, bound, cur);
            let y = g.elu(y);
            cur = res.forward(g, bound, y);
            pyramid.push((cfg.height >> (i + 1), cur));
        }

        // Variational bottleneck.
        let pooled = g.global_avg_pool(cur);
        let latent_mean = self.lat_mean.forward(g, bound, pooled);
        let raw_logvar = self.lat_logvar.forward(g, bound, pooled);
        let latent_logvar = g.clamp(raw_logvar, LOG_VARIANCE_MIN, LOG_VARIANCE_MAX);
        let latent_sample = match epsilon {
            None => latent_mean,
            Some(eps) => {
                assert_eq!(eps.shape(), &[batch, cfg.latent_dim]);
                let half_lv = g.mul_scalar(latent_logvar, 0.5);
                let std = g.exp(half_lv);
                let eps_node = g.leaf(eps.clone().into_dyn());
                let noise = g.mul(std, eps_node);
                g.add(latent_mean, noise)
            }
        };

        // Decoder.
        let (_, deep_h, deep_w) = cfg.deepest();
        let seed = bound.id("dec.seed");
        let canvas = g.broadcast_batch(seed, batch);
        let zmap = g.broadcast_spatial(latent_sample, deep_h, deep_w);
        let injected = g.concat_channels(&[canvas, zmap]);
        let mut d = self.dec_inject.forward(g, bound, injected);
        d = g.elu(d);
        d = self.dec_res_deep.forward(g, bound, d);

        for stage in &self.dec_stages {
            let up = g.upsample_nearest2(d);
            let y = stage.up.forward(g, bound, up);
            d = g.elu(y);
            if let Some(skip) = &stage.skip {
                let enc = pyramid
                    .iter()
                    .find(|(r, _)| *r == stage.resolution)
                    .map(|(_, n)| *n)
                    .expect("validated skip resolution");
                d = match skip {
                    SkipLayer::Residual { proj } => {
                        let p = proj.forward(g, bound, enc);
                        g.add(d, p)
                    }
                    SkipLayer::Attention(attn) => attn.forward(g, bound, d, enc),
                };
            }
            d = stage.res.forward(g, bound, d);
        }

        let mean_raw = self.head_mean.forward(g, bound, d);
        let mean = g.sigmoid(mean_raw);
        let logvar_raw = self.head_logvar.forward(g, bound, d);
        let log_variance = g.clamp(logvar_raw, LOG_VARIANCE_MIN, LOG_VARIANCE_MAX);

        ForwardNodes {
            pyramid,
            latent_mean,
            latent_logvar,
            latent_sample,
            mean,
            log_variance,
        }
    }

    fn draw_epsilon(&self, rng: Option<&mut ChaCha8Rng>) -> Result<Option<Array2<f64>>> {
        if self.config.deterministic_latent {
            return Ok(None);
        }
        let rng = rng.ok_or_else(|| {
            Error::invalid("stochastic latent requires an RNG; pass one or set deterministic_latent")
        })?;
        let eps = Array2::from_shape_fn((1, self.config.latent_dim), |_| {
            rand::Rng::sample(rng, StandardNormal)
        });
        Ok(Some(eps))
    }

    /// Encode one window: the encoder feature pyramid (by height) plus the
    /// latent. `rng` is only consulted in stochastic-latent mode.
    pub fn encode(
        &self,
        seq: &FrameSequence,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<(usize, Array3<f64>)>, LatentSample)> {
        let input = self.stack_window(seq)?;
        let eps = self.draw_epsilon(rng)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let x = g.leaf(input);
        let nodes = self.forward_nodes(&mut g, &bound, x, eps.as_ref());
        let pyramid = nodes
            .pyramid
            .iter()
            .map(|(r, id)| {
                let v = g
                    .value(*id)
                    .index_axis(Axis(0), 0)
                    .to_owned()
                    .into_dimensionality::<ndarray::Ix3>()
                    .expect("pyramid level is (B,C,H,W)");
                (*r, v)
            })
            .collect();
        let latent = self.latent_from_nodes(&g, &nodes);
        Ok((pyramid, latent))
    }

    fn latent_from_nodes(&self, g: &Graph, nodes: &ForwardNodes) -> LatentSample {
        let row = |id: NodeId| -> Array1<f64> {
            g.value(id)
                .index_axis(Axis(0), 0)
                .to_owned()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("latent is (B,D)")
        };
        LatentSample {
            mean: row(nodes.latent_mean),
            log_variance: row(nodes.latent_logvar),
            sample: row(nodes.latent_sample),
        }
    }

    fn gaussian_from_nodes(&self, g: &Graph, nodes: &ForwardNodes) -> Result<GaussianImage> {
        let take = |id: NodeId| -> Array3<f64> {
            g.value(id)
                .index_axis(Axis(0), 0)
                .to_owned()
                .into_dimensionality::<ndarray::Ix3>()
                .expect("head output is (B,C,H,W)")
        };
        GaussianImage::new(take(nodes.mean), take(nodes.log_variance))
    }

    /// Single-step prediction: encode then decode, returning the Gaussian
    /// next frame and the latent used.
    pub fn predict_next(
        &self,
        seq: &FrameSequence,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(GaussianImage, LatentSample)> {
        let input = self.stack_window(seq)?;
        let eps = self.draw_epsilon(rng)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let x = g.leaf(input);
        let nodes = self.forward_nodes(&mut g, &bound, x, eps.as_ref());
        let latent = self.latent_from_nodes(&g, &nodes);
        let gaussian = self.gaussian_from_nodes(&g, &nodes)?;
        Ok((gaussian, latent))
    }

    /// Apply just the configured skip block at `resolution` to explicit
    /// decoder/encoder feature maps (C_d x R x R and C_e x R x R).
    pub fn attention_skip(
        &self,
        resolution: usize,
        dec_feats: &Array3<f64>,
        enc_feats: &Array3<f64>,
    ) -> Result<Array3<f64>> {
        let stage = self
            .dec_stages
            .iter()
            .find(|s| s.resolution == resolution)
            .ok_or_else(|| Error::invalid(format!("no decoder stage at resolution {resolution}")))?;
        let attn = match &stage.skip {
            Some(SkipLayer::Attention(a)) => a,
            _ => {
                return Err(Error::invalid(format!(
                    "no attention skip configured at resolution {resolution}"
                )))
            }
        };
        if dec_feats.shape()[1..] != enc_feats.shape()[1..] {
            return Err(Error::invalid(format!(
                "decoder {:?} and encoder {:?} resolutions differ",
                &dec_feats.shape()[1..],
                &enc_feats.shape()[1..]
            )));
        }
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let d = g.leaf(insert_batch(dec_feats));
        let e = g.leaf(insert_batch(enc_feats));
        let out = attn.forward(&mut g, &bound, d, e);
        Ok(g.value(out)
            .index_axis(Axis(0), 0)
            .to_owned()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap())
    }

    /// Iterated single-step prediction. Each predicted mean is appended as
    /// the newest input frame (oldest dropped); no gradients are retained.
    /// Returns the `k` predicted frames.
    pub fn rollout(
        &self,
        seed: &FrameSequence,
        k: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<FrameSequence> {
        if k < 1 {
            return Err(Error::invalid("rollout needs k >= 1"));
        }
        self.check_input_window(seed)?;
        let cfg = &self.config;
        let mut window = seed.clone();
        let mut out = ndarray::Array4::zeros((k, cfg.channels, cfg.height, cfg.width));
        for step in 0..k {
            let (pred, _) = self.predict_next(&window, rng.as_deref_mut())?;
            out.index_axis_mut(Axis(0), step).assign(pred.mean());
            window = window.push_frame(pred.mean())?;
        }
        FrameSequence::new(out, seed.frame_interval())
    }
}

fn insert_batch(a: &Array3<f64>) -> ArrayD<f64> {
    let mut shape = vec![1];
    shape.extend_from_slice(a.shape());
    a.clone()
        .into_shape_with_order(IxDyn(&shape))
        .expect("standard layout")
}

#[cfg(test)]
mod tests;
