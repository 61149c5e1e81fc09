//! Video sequence ingestion, joint spatial transforms, window sampling, and
//! a synthetic sprite dataset for desk-scale runs.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered stack of frames (T,C,H,W) with intensities in `[0,1]`.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    frames: Array4<f64>,
    frame_interval: f64,
}

impl FrameSequence {
    pub fn new(frames: Array4<f64>, frame_interval: f64) -> Result<Self> {
        if frames.shape()[0] < 1 {
            return Err(Error::invalid("frame sequence must hold at least one frame"));
        }
        if frames.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("frame values must lie in [0,1]"));
        }
        Ok(FrameSequence {
            frames,
            frame_interval,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false // T >= 1 by construction
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    pub fn frames(&self) -> &Array4<f64> {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, f64> {
        self.frames.index_axis(Axis(0), t)
    }

    /// Contiguous sub-sequence `[start, start+len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<FrameSequence> {
        if start + len > self.len() || len == 0 {
            return Err(Error::invalid(format!(
                "window [{start}, {start}+{len}) out of range for length {}",
                self.len()
            )));
        }
        let frames = self
            .frames
            .slice(ndarray::s![start..start + len, .., .., ..])
            .to_owned();
        Ok(FrameSequence {
            frames,
            frame_interval: self.frame_interval,
        })
    }

    /// Append a frame at the end, dropping the oldest.
    pub fn push_frame(&self, frame: &Array3<f64>) -> Result<FrameSequence> {
        if frame.shape() != &self.frames.shape()[1..] {
            return Err(Error::invalid("pushed frame shape mismatch"));
        }
        let t = self.len();
        let mut frames = Array4::zeros((t, self.channels(), self.height(), self.width()));
        for i in 1..t {
            frames
                .index_axis_mut(Axis(0), i - 1)
                .assign(&self.frames.index_axis(Axis(0), i));
        }
        frames.index_axis_mut(Axis(0), t - 1).assign(frame);
        FrameSequence::new(frames, self.frame_interval)
    }
}

/// Deterministic seed splitting (splitmix64 over a tag stream). Every
/// stochastic choice in the crate derives its own seed this way, so runs
/// are reproducible and resumable without persisting RNG state.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master ^ 0x9e37_79b9_7f4a_7c15;
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    state = mix(state);
    for t in tags {
        state = mix(state ^ t.wrapping_mul(0xd134_2543_de82_ef95).wrapping_add(1));
    }
    state
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// How a source frame reaches the target size before cropping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RescaleMode {
    /// Scale so both axes cover the target (shorter side hits it first),
    /// preserving aspect ratio; a crop then cuts to size.
    ShorterSide,
    /// Resize directly to the target, ignoring aspect ratio.
    Exact,
}

/// Joint spatial transform for a window: one scale and one crop rectangle,
/// applied identically to every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpec {
    pub target_height: usize,
    pub target_width: usize,
    pub rescale: RescaleMode,
    pub random_crop: bool,
    /// Master seed for crop positions; each window splits its own stream.
    pub crop_seed: u64,
}

impl TransformSpec {
    pub fn identity(height: usize, width: usize) -> Self {
        TransformSpec {
            target_height: height,
            target_width: width,
            rescale: RescaleMode::ShorterSide,
            random_crop: false,
            crop_seed: 0,
        }
    }
}

/// Crop rectangle recorded for a transformed window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// What `sample_window` did to a window, for instrumentation and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTransform {
    pub source_size: (usize, usize),
    pub scaled_size: (usize, usize),
    pub crop: CropRect,
}

/// Bilinear resample of one frame to (th, tw).
pub fn resize_bilinear(frame: &ArrayView3<'_, f64>, th: usize, tw: usize) -> Array3<f64> {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    if (h, w) == (th, tw) {
        return frame.to_owned();
    }
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    let mut out = Array3::zeros((c, th, tw));
    for i in 0..th {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for j in 0..tw {
            let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ci in 0..c {
                let a = frame[[ci, y0, x0]];
                let b = frame[[ci, y0, x1]];
                let d = frame[[ci, y1, x0]];
                let e = frame[[ci, y1, x1]];
                let top = a + (b - a) * wx;
                let bot = d + (e - d) * wx;
                let v = top + (bot - top) * wy;
                out[[ci, i, j]] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// How frames are stored in a directory dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorMode {
    Gray,
    Rgb,
}

impl ColorMode {
    pub fn channels(self) -> usize {
        match self {
            ColorMode::Gray => 1,
            ColorMode::Rgb => 3,
        }
    }
}

/// Directory layout description: `root/<sequence>/<index>.<ext>` with
/// zero-padded numeric indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DirectoryLayout {
    pub color: ColorMode,
}

enum SequenceSource {
    InMemory(Array4<f64>),
    Directory {
        frames: Vec<PathBuf>,
        color: ColorMode,
        height: usize,
        width: usize,
    },
}

impl SequenceSource {
    fn len(&self) -> usize {
        match self {
            SequenceSource::InMemory(a) => a.shape()[0],
            SequenceSource::Directory { frames, .. } => frames.len(),
        }
    }
}

/// A collection of frame sequences with a shared windowing and transform
/// policy. Every stored sequence is at least `window_length` long.
pub struct SequenceDataset {
    sources: Vec<(String, SequenceSource)>,
    window_length: usize,
    transform: TransformSpec,
    frame_interval: f64,
}

impl SequenceDataset {
    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn transform(&self) -> &TransformSpec {
        &self.transform
    }

    pub fn num_sequences(&self) -> usize {
        self.sources.len()
    }

    pub fn sequence_name(&self, idx: usize) -> &str {
        &self.sources[idx].0
    }

    pub fn sequence_len(&self, idx: usize) -> usize {
        self.sources[idx].1.len()
    }

    /// Number of distinct window start positions in one sequence.
    pub fn num_windows(&self, idx: usize) -> usize {
        self.sequence_len(idx) - self.window_length + 1
    }

    /// Total count of (sequence, start) pairs.
    pub fn total_windows(&self) -> usize {
        (0..self.num_sequences()).map(|i| self.num_windows(i)).sum()
    }

    /// Load a whole sequence untransformed (native resolution).
    pub fn load_sequence(&self, idx: usize) -> Result<FrameSequence> {
        if idx >= self.num_sequences() {
            return Err(Error::invalid(format!(
                "sequence index {idx} out of range ({} sequences)",
                self.num_sequences()
            )));
        }
        let frames = match &self.sources[idx].1 {
            SequenceSource::InMemory(a) => a.clone(),
            SequenceSource::Directory {
                frames,
                color,
                height,
                width,
            } => {
                let mut out = Array4::zeros((frames.len(), color.channels(), *height, *width));
                for (t, path) in frames.iter().enumerate() {
                    let frame = load_frame(path, *color)?;
                    if frame.shape() != [color.channels(), *height, *width] {
                        return Err(Error::io(path, "frame size changed since scan"));
                    }
                    out.index_axis_mut(Axis(0), t).assign(&frame);
                }
                out
            }
        };
        FrameSequence::new(frames, self.frame_interval)
    }

    /// A contiguous, jointly transformed window of `window_length` frames.
    pub fn sample_window(&self, seq_idx: usize, start: usize) -> Result<FrameSequence> {
        Ok(self.sample_window_info(seq_idx, start)?.0)
    }

    /// As [`sample_window`](Self::sample_window), also reporting the shared
    /// crop rectangle and scaling applied to every frame of the window.
    pub fn sample_window_info(
        &self,
        seq_idx: usize,
        start: usize,
    ) -> Result<(FrameSequence, WindowTransform)> {
        if seq_idx >= self.num_sequences() {
            return Err(Error::invalid(format!(
                "sequence index {seq_idx} out of range ({} sequences)",
                self.num_sequences()
            )));
        }
        if start + self.window_length > self.sequence_len(seq_idx) {
            return Err(Error::invalid(format!(
                "window start {start} out of range for sequence of length {}",
                self.sequence_len(seq_idx)
            )));
        }
        let raw = self
            .load_sequence(seq_idx)?
            .window(start, self.window_length)?;
        let (h, w) = (raw.height(), raw.width());
        let (th, tw) = (self.transform.target_height, self.transform.target_width);

        let (sh, sw) = match self.transform.rescale {
            RescaleMode::Exact => (th, tw),
            RescaleMode::ShorterSide => {
                if (h, w) == (th, tw) {
                    (h, w)
                } else {
                    // Minimal uniform scale covering the target in both axes.
                    let scale = (th as f64 / h as f64).max(tw as f64 / w as f64);
                    let sh = (h as f64 * scale).round().max(th as f64) as usize;
                    let sw = (w as f64 * scale).round().max(tw as f64) as usize;
                    (sh, sw)
                }
            }
        };

        // One crop rectangle per window, shared by every frame.
        let crop = if sh == th && sw == tw {
            CropRect {
                top: 0,
                left: 0,
                height: th,
                width: tw,
            }
        } else if self.transform.random_crop {
            let seed = derive_seed(
                self.transform.crop_seed,
                &[seq_idx as u64, start as u64],
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            CropRect {
                top: rng.random_range(0..=sh - th),
                left: rng.random_range(0..=sw - tw),
                height: th,
                width: tw,
            }
        } else {
            CropRect {
                top: (sh - th) / 2,
                left: (sw - tw) / 2,
                height: th,
                width: tw,
            }
        };

        let mut out = Array4::zeros((raw.len(), raw.channels(), th, tw));
        for t in 0..raw.len() {
            let scaled = resize_bilinear(&raw.frame(t), sh, sw);
            let view = scaled.slice(ndarray::s![
                ..,
                crop.top..crop.top + th,
                crop.left..crop.left + tw
            ]);
            out.index_axis_mut(Axis(0), t).assign(&view);
        }
        let seq = FrameSequence::new(out, self.frame_interval)?;
        Ok((
            seq,
            WindowTransform {
                source_size: (h, w),
                scaled_size: (sh, sw),
                crop,
            },
        ))
    }
}

// ---------------------------------------------------------------------------
// Directory ingestion
// ---------------------------------------------------------------------------

fn numeric_stem(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.parse().ok()
}

fn load_frame(path: &Path, color: ColorMode) -> Result<Array3<f64>> {
    let img = image::open(path).map_err(|e| Error::io(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let arr = match color {
        ColorMode::Gray => {
            let gray = img.to_luma8();
            Array3::from_shape_fn((1, h, w), |(_, y, x)| {
                gray.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
            })
        }
        ColorMode::Rgb => {
            let rgb = img.to_rgb8();
            Array3::from_shape_fn((3, h, w), |(c, y, x)| {
                rgb.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
            })
        }
    };
    Ok(arr)
}

/// Load one directory of numerically named frames as a sequence.
pub fn load_sequence_dir(dir: &Path, color: ColorMode) -> Result<FrameSequence> {
    if !dir.is_dir() {
        return Err(Error::io(dir, "not a directory"));
    }
    let mut frames: Vec<(u64, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter_map(|p| numeric_stem(&p).map(|n| (n, p)))
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(Error::io(dir, "no numerically named frames found"));
    }
    let mut decoded = Vec::with_capacity(frames.len());
    for (_, path) in &frames {
        decoded.push(load_frame(path, color)?);
    }
    let (c, h, w) = (
        decoded[0].shape()[0],
        decoded[0].shape()[1],
        decoded[0].shape()[2],
    );
    let mut out = Array4::zeros((decoded.len(), c, h, w));
    for (t, frame) in decoded.iter().enumerate() {
        if frame.shape() != [c, h, w] {
            return Err(Error::io(
                &frames[t].1,
                format!("frame size {:?} differs from first frame", &frame.shape()[1..]),
            ));
        }
        out.index_axis_mut(Axis(0), t).assign(frame);
    }
    FrameSequence::new(out, 0.1)
}

/// Discover `root/<sequence>/<index>.png`-style sequences. Frame order is
/// numeric filename order; sequences shorter than `window_length` are
/// excluded with a warning on stderr.
pub fn load_directory_dataset(
    root: &Path,
    layout: DirectoryLayout,
    window_length: usize,
    transform: TransformSpec,
) -> Result<SequenceDataset> {
    if !root.is_dir() {
        return Err(Error::io(root, "dataset root is not a directory"));
    }
    let mut seq_dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    seq_dirs.sort();
    if seq_dirs.is_empty() {
        return Err(Error::io(root, "no sequence subdirectories found"));
    }

    let mut sources = Vec::new();
    for dir in seq_dirs {
        let mut frames: Vec<(u64, PathBuf)> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .filter_map(|p| numeric_stem(&p).map(|n| (n, p)))
            .collect();
        frames.sort();
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if frames.len() < window_length {
            eprintln!(
                "warning: sequence {name:?} has {} frames, shorter than window {window_length}; excluded",
                frames.len()
            );
            continue;
        }
        // One dimension scan up front so size mismatches fail at load, not
        // mid-training.
        let mut size: Option<(usize, usize)> = None;
        for (_, p) in &frames {
            let (w, h) = image::image_dimensions(p).map_err(|e| Error::io(p, e))?;
            let dims = (h as usize, w as usize);
            match size {
                None => size = Some(dims),
                Some(s) if s != dims => {
                    return Err(Error::io(
                        p,
                        format!("frame size {dims:?} differs from first frame {s:?}"),
                    ));
                }
                _ => {}
            }
        }
        let (height, width) = size.unwrap();
        sources.push((
            name,
            SequenceSource::Directory {
                frames: frames.into_iter().map(|(_, p)| p).collect(),
                color: layout.color,
                height,
                width,
            },
        ));
    }
    if sources.is_empty() {
        return Err(Error::io(
            root,
            format!("no sequence has at least {window_length} frames"),
        ));
    }
    Ok(SequenceDataset {
        sources,
        window_length,
        transform,
        frame_interval: 0.1,
    })
}

// ---------------------------------------------------------------------------
// Synthetic sprites
// ---------------------------------------------------------------------------

/// Geometry of one moving sprite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpriteKind {
    Square,
    Circle,
}

/// A sprite with integer position and velocity so that unobstructed motion
/// is an exact pixel shift.
#[derive(Clone, Debug)]
pub struct Sprite {
    pub kind: SpriteKind,
    pub size: usize,
    pub color: Vec<f64>,
    pub position: (i64, i64),
    pub velocity: (i64, i64),
}

/// Advance sprites one step with boundary bounce; positions stay inside
/// `[0, canvas - size]` on both axes.
pub fn step_sprites(sprites: &mut [Sprite], canvas: usize) {
    for s in sprites {
        let max_y = (canvas - s.size) as i64;
        let max_x = (canvas - s.size) as i64;
        let (mut y, mut x) = (s.position.0 + s.velocity.0, s.position.1 + s.velocity.1);
        let (mut vy, mut vx) = s.velocity;
        if y < 0 {
            y = -y;
            vy = -vy;
        } else if y > max_y {
            y = 2 * max_y - y;
            vy = -vy;
        }
        if x < 0 {
            x = -x;
            vx = -vx;
        } else if x > max_x {
            x = 2 * max_x - x;
            vx = -vx;
        }
        s.position = (y.clamp(0, max_y), x.clamp(0, max_x));
        s.velocity = (vy, vx);
    }
}

/// Paint sprites (in order) onto a black canvas.
pub fn render_sprites(sprites: &[Sprite], canvas: usize, channels: usize) -> Array3<f64> {
    let mut frame = Array3::zeros((channels, canvas, canvas));
    for s in sprites {
        assert_eq!(s.color.len(), channels, "sprite color channel mismatch");
        let r = s.size as f64 / 2.0;
        for dy in 0..s.size {
            for dx in 0..s.size {
                let inside = match s.kind {
                    SpriteKind::Square => true,
                    SpriteKind::Circle => {
                        let cy = dy as f64 + 0.5 - r;
                        let cx = dx as f64 + 0.5 - r;
                        cy * cy + cx * cx <= r * r
                    }
                };
                if !inside {
                    continue;
                }
                let y = s.position.0 + dy as i64;
                let x = s.position.1 + dx as i64;
                if y < 0 || x < 0 || y >= canvas as i64 || x >= canvas as i64 {
                    continue;
                }
                for c in 0..channels {
                    frame[[c, y as usize, x as usize]] = s.color[c];
                }
            }
        }
    }
    frame
}

/// Declarative description of a synthetic sprite dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_sequences: usize,
    pub length: usize,
    pub size: usize,
    pub channels: usize,
    pub num_sprites: usize,
    pub max_speed: i64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_sequences: 8,
            length: 30,
            size: 32,
            channels: 1,
            num_sprites: 2,
            max_speed: 2,
            seed: 0,
        }
    }
}

/// Render a fully deterministic sprite dataset: constant-velocity motion
/// with boundary bounce, seeded per sequence.
pub fn make_synthetic_dataset(
    spec: &SyntheticSpec,
    window_length: usize,
    transform: TransformSpec,
) -> Result<SequenceDataset> {
    if spec.size < 16 {
        return Err(Error::config(format!(
            "synthetic size must be >= 16, got {}",
            spec.size
        )));
    }
    if spec.length < window_length {
        return Err(Error::config(format!(
            "synthetic length {} shorter than window {window_length}",
            spec.length
        )));
    }
    if spec.num_sequences == 0 || spec.num_sprites == 0 || spec.channels == 0 {
        return Err(Error::config("synthetic spec has a zero-sized dimension"));
    }
    if spec.max_speed < 0 {
        return Err(Error::config("max_speed must be nonnegative"));
    }

    let mut sources = Vec::new();
    for si in 0..spec.num_sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[si as u64]));
        let mut sprites = Vec::new();
        for _ in 0..spec.num_sprites {
            let size = rng.random_range(spec.size / 8..=spec.size / 4).max(2);
            let kind = if rng.random_range(0..2) == 0 {
                SpriteKind::Square
            } else {
                SpriteKind::Circle
            };
            let color = (0..spec.channels)
                .map(|_| rng.random_range(0.35..1.0))
                .collect();
            let max_pos = (spec.size - size) as i64;
            let position = (
                rng.random_range(0..=max_pos),
                rng.random_range(0..=max_pos),
            );
            let velocity = (
                rng.random_range(-spec.max_speed..=spec.max_speed),
                rng.random_range(-spec.max_speed..=spec.max_speed),
            );
            sprites.push(Sprite {
                kind,
                size,
                color,
                position,
                velocity,
            });
        }
        let mut frames = Array4::zeros((spec.length, spec.channels, spec.size, spec.size));
        for t in 0..spec.length {
            frames
                .index_axis_mut(Axis(0), t)
                .assign(&render_sprites(&sprites, spec.size, spec.channels));
            step_sprites(&mut sprites, spec.size);
        }
        sources.push((format!("synthetic_{si:03}"), SequenceSource::InMemory(frames)));
    }
    Ok(SequenceDataset {
        sources,
        window_length,
        transform,
        frame_interval: 0.1,
    })
}

/// Build a dataset directly from in-memory sequences (all at least
/// `window_length` long).
pub fn dataset_from_sequences(
    sequences: Vec<FrameSequence>,
    window_length: usize,
    transform: TransformSpec,
) -> Result<SequenceDataset> {
    if sequences.is_empty() {
        return Err(Error::invalid("dataset needs at least one sequence"));
    }
    let mut sources = Vec::new();
    for (i, seq) in sequences.into_iter().enumerate() {
        if seq.len() < window_length {
            return Err(Error::invalid(format!(
                "sequence {i} has {} frames, shorter than window {window_length}",
                seq.len()
            )));
        }
        sources.push((format!("seq_{i:03}"), SequenceSource::InMemory(seq.frames().clone())));
    }
    Ok(SequenceDataset {
        sources,
        window_length,
        transform,
        frame_interval: 0.1,
    })
}

// ---------------------------------------------------------------------------
// Image export
// ---------------------------------------------------------------------------

/// Convert one frame to an 8-bit image (gray for 1 channel, RGB otherwise).
pub fn frame_to_image(frame: &ArrayView3<'_, f64>) -> image::DynamicImage {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    if c == 1 {
        let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_u8(frame[[0, y as usize, x as usize]])])
        });
        image::DynamicImage::ImageLuma8(img)
    } else {
        let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |ci: usize| to_u8(frame[[ci.min(c - 1), y as usize, x as usize]]);
            image::Rgb([px(0), px(1), px(2)])
        });
        image::DynamicImage::ImageRgb8(img)
    }
}

/// Write a sequence as zero-padded numbered PNGs under `dir`.
pub fn write_sequence_dir(seq: &FrameSequence, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..seq.len() {
        let path = dir.join(format!("{t:06}.png"));
        frame_to_image(&seq.frame(t))
            .save(&path)
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_sprite(size: usize) -> Sprite {
        Sprite {
            kind: SpriteKind::Square,
            size: 4,
            color: vec![0.8],
            position: (size as i64 / 2, size as i64 / 2),
            velocity: (0, 0),
        }
    }

    #[test]
    fn frame_sequence_invariants() {
        assert!(FrameSequence::new(Array4::zeros((0, 1, 4, 4)), 0.1).is_err());
        assert!(FrameSequence::new(Array4::from_elem((1, 1, 4, 4), 1.5), 0.1).is_err());
        let seq = FrameSequence::new(Array4::zeros((3, 1, 4, 4)), 0.1).unwrap();
        assert_eq!(seq.len(), 3);
    }

    #[test]
    fn zero_velocity_is_static() {
        let spec = SyntheticSpec {
            num_sequences: 1,
            max_speed: 0,
            ..Default::default()
        };
        let ds = make_synthetic_dataset(&spec, 5, TransformSpec::identity(32, 32)).unwrap();
        let seq = ds.load_sequence(0).unwrap();
        for t in 1..seq.len() {
            assert_eq!(seq.frame(t), seq.frame(0), "frame {t} moved");
        }
    }

    #[test]
    fn unit_velocity_is_exact_pixel_shift() {
        let size = 32;
        let mut sprites = vec![Sprite {
            kind: SpriteKind::Circle,
            size: 6,
            color: vec![0.9],
            position: (10, 5),
            velocity: (0, 1),
        }];
        let f0 = render_sprites(&sprites, size, 1);
        step_sprites(&mut sprites, size);
        let f1 = render_sprites(&sprites, size, 1);
        // f1 shifted one pixel right of f0 wherever both are defined.
        for y in 0..size {
            for x in 0..size - 1 {
                assert_eq!(
                    f0[[0, y, x]],
                    f1[[0, y, x + 1]],
                    "mismatch at ({y},{x})"
                );
            }
        }
    }

    #[test]
    fn bounce_reflects_off_walls() {
        let size = 16;
        let mut sprites = vec![Sprite {
            kind: SpriteKind::Square,
            size: 4,
            color: vec![1.0],
            position: (0, 11),
            velocity: (-2, 2),
        }];
        step_sprites(&mut sprites, size);
        assert_eq!(sprites[0].position, (2, 11));
        assert_eq!(sprites[0].velocity, (2, -2));
        // Never leaves the canvas over many steps.
        for _ in 0..200 {
            step_sprites(&mut sprites, size);
            let (y, x) = sprites[0].position;
            assert!(y >= 0 && x >= 0 && y <= 12 && x <= 12);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec::default();
        let a = make_synthetic_dataset(&spec, 5, TransformSpec::identity(32, 32)).unwrap();
        let b = make_synthetic_dataset(&spec, 5, TransformSpec::identity(32, 32)).unwrap();
        for i in 0..a.num_sequences() {
            assert_eq!(
                a.load_sequence(i).unwrap().frames(),
                b.load_sequence(i).unwrap().frames()
            );
        }
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let small = SyntheticSpec {
            size: 8,
            ..Default::default()
        };
        assert!(matches!(
            make_synthetic_dataset(&small, 5, TransformSpec::identity(8, 8)),
            Err(Error::Config(_))
        ));
        let short = SyntheticSpec {
            length: 3,
            ..Default::default()
        };
        assert!(make_synthetic_dataset(&short, 5, TransformSpec::identity(32, 32)).is_err());
    }

    #[test]
    fn static_window_stays_static_under_crop() {
        let frame = render_sprites(&[static_sprite(32)], 32, 1);
        let mut frames = Array4::zeros((6, 1, 32, 32));
        for t in 0..6 {
            frames.index_axis_mut(Axis(0), t).assign(&frame);
        }
        let seq = FrameSequence::new(frames, 0.1).unwrap();
        let transform = TransformSpec {
            target_height: 16,
            target_width: 16,
            rescale: RescaleMode::ShorterSide,
            random_crop: true,
            crop_seed: 7,
        };
        let ds = dataset_from_sequences(vec![seq], 6, transform).unwrap();
        let win = ds.sample_window(0, 0).unwrap();
        for t in 1..win.len() {
            assert_eq!(win.frame(t), win.frame(0));
        }
    }

    #[test]
    fn identity_transform_is_identity() {
        let spec = SyntheticSpec::default();
        let ds = make_synthetic_dataset(&spec, 5, TransformSpec::identity(32, 32)).unwrap();
        let raw = ds.load_sequence(0).unwrap();
        let win = ds.sample_window(0, 3).unwrap();
        assert_eq!(
            win.frames(),
            &raw.window(3, 5).unwrap().frames().clone()
        );
    }

    #[test]
    fn crop_rect_is_deterministic_and_shared() {
        // Non-square source so the shorter-side rescale leaves crop slack.
        let frames = Array4::from_shape_fn((10, 1, 48, 96), |(t, _, y, x)| {
            ((t + y + x) % 7) as f64 / 7.0
        });
        let seq = FrameSequence::new(frames, 0.1).unwrap();
        let transform = TransformSpec {
            target_height: 32,
            target_width: 32,
            rescale: RescaleMode::ShorterSide,
            random_crop: true,
            crop_seed: 123,
        };
        let ds = dataset_from_sequences(vec![seq], 5, transform).unwrap();
        let (_, info1) = ds.sample_window_info(0, 2).unwrap();
        let (_, info2) = ds.sample_window_info(0, 2).unwrap();
        assert_eq!(info1, info2, "same window must reuse its crop");
        assert_eq!(info1.scaled_size, (32, 64));
        assert_eq!(info1.crop.height, 32);
        // Different windows draw from different streams; with 33 possible
        // offsets a few starts must differ.
        let rects: Vec<CropRect> = (0..6)
            .map(|s| ds.sample_window_info(0, s).unwrap().1.crop)
            .collect();
        assert!(rects.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn out_of_range_window_is_error() {
        let spec = SyntheticSpec::default();
        let ds = make_synthetic_dataset(&spec, 5, TransformSpec::identity(32, 32)).unwrap();
        assert!(ds.sample_window(99, 0).is_err());
        assert!(ds.sample_window(0, 26).is_err());
        assert!(ds.sample_window(0, 25).is_ok());
    }

    #[test]
    fn pixel_range_preserved_through_transforms() {
        let spec = SyntheticSpec {
            size: 40,
            ..Default::default()
        };
        let transform = TransformSpec {
            target_height: 32,
            target_width: 32,
            rescale: RescaleMode::ShorterSide,
            random_crop: true,
            crop_seed: 5,
        };
        let ds = make_synthetic_dataset(&spec, 5, transform).unwrap();
        let win = ds.sample_window(0, 0).unwrap();
        assert!(win.frames().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn directory_roundtrip_and_window_count() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            num_sequences: 2,
            length: 20,
            ..Default::default()
        };
        let ds = make_synthetic_dataset(&spec, 7, TransformSpec::identity(32, 32)).unwrap();
        for i in 0..2 {
            let seq = ds.load_sequence(i).unwrap();
            write_sequence_dir(&seq, &dir.path().join(format!("seq{i}"))).unwrap();
        }
        let loaded = load_directory_dataset(
            dir.path(),
            DirectoryLayout {
                color: ColorMode::Gray,
            },
            7,
            TransformSpec::identity(32, 32),
        )
        .unwrap();
        assert_eq!(loaded.num_sequences(), 2);
        assert_eq!(loaded.total_windows(), 28); // 2 * (20 - 7 + 1)
        // Pixels survive the 8-bit roundtrip to within quantisation.
        let orig = ds.load_sequence(0).unwrap();
        let back = loaded.load_sequence(0).unwrap();
        let max_err = orig
            .frames()
            .iter()
            .zip(back.frames().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 0.5 / 255.0 + 1e-9, "max_err {max_err}");
    }

    #[test]
    fn empty_root_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_directory_dataset(
            dir.path(),
            DirectoryLayout {
                color: ColorMode::Gray
            },
            5,
            TransformSpec::identity(8, 8),
        )
        .is_err());
        assert!(load_directory_dataset(
            Path::new("/definitely/not/here"),
            DirectoryLayout {
                color: ColorMode::Gray
            },
            5,
            TransformSpec::identity(8, 8),
        )
        .is_err());
    }

    #[test]
    fn mixed_sizes_within_sequence_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let seq_dir = dir.path().join("s0");
        std::fs::create_dir_all(&seq_dir).unwrap();
        image::GrayImage::new(8, 8)
            .save(seq_dir.join("000000.png"))
            .unwrap();
        image::GrayImage::new(10, 8)
            .save(seq_dir.join("000001.png"))
            .unwrap();
        let err = load_directory_dataset(
            dir.path(),
            DirectoryLayout {
                color: ColorMode::Gray,
            },
            2,
            TransformSpec::identity(8, 8),
        );
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn short_sequences_excluded_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        for (name, count) in [("long", 10), ("short", 3)] {
            let seq_dir = dir.path().join(name);
            std::fs::create_dir_all(&seq_dir).unwrap();
            for i in 0..count {
                image::GrayImage::new(8, 8)
                    .save(seq_dir.join(format!("{i:06}.png")))
                    .unwrap();
            }
        }
        let ds = load_directory_dataset(
            dir.path(),
            DirectoryLayout {
                color: ColorMode::Gray,
            },
            5,
            TransformSpec::identity(8, 8),
        )
        .unwrap();
        assert_eq!(ds.num_sequences(), 1);
        assert_eq!(ds.sequence_name(0), "long");
    }

    #[test]
    fn unreadable_file_error_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let seq_dir = dir.path().join("s0");
        std::fs::create_dir_all(&seq_dir).unwrap();
        std::fs::write(seq_dir.join("000000.png"), b"not a png").unwrap();
        let err = load_directory_dataset(
            dir.path(),
            DirectoryLayout {
                color: ColorMode::Gray,
            },
            1,
            TransformSpec::identity(8, 8),
        )
        .err()
        .expect("corrupt png must fail");
        let msg = err.to_string();
        assert!(msg.contains("000000.png"), "error does not name file: {msg}");
    }

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(1, &[0, 0]);
        let b = derive_seed(1, &[0, 1]);
        let c = derive_seed(2, &[0, 0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, &[0, 0]));
    }

    #[test]
    fn push_frame_slides_window() {
        let mut frames = Array4::zeros((3, 1, 2, 2));
        for t in 0..3 {
            frames
                .index_axis_mut(Axis(0), t)
                .fill(0.1 * (t + 1) as f64);
        }
        let seq = FrameSequence::new(frames, 0.1).unwrap();
        let new = Array3::from_elem((1, 2, 2), 0.9);
        let pushed = seq.push_frame(&new).unwrap();
        assert_eq!(pushed.len(), 3);
        assert!((pushed.frame(0)[[0, 0, 0]] - 0.2).abs() < 1e-12);
        assert!((pushed.frame(2)[[0, 0, 0]] - 0.9).abs() < 1e-12);
    }
}
