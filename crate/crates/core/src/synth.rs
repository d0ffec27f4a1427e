//! Synthetic free-fall videos with known static and dynamic latents.
//!
//! Each video is a time-constant value-noise background (the static class)
//! plus one smooth sprite whose height follows `y(t) = y0 + v0 t - g t^2 / 2`
//! (the dynamic class is the gravity value `g`). Background and sprite are
//! composed additively and never saturate, so subtracting the background
//! recovers the sprite layer exactly.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Domain};
use crate::tensorfile::{self, NamedTensor};
use crate::video::VideoTensor;

pub const CHANNELS: usize = 3;
/// Peak sprite intensity; backgrounds stay below `1 - SPRITE_PEAK`.
pub const SPRITE_PEAK: f64 = 0.5;
const BG_MAX: f64 = 0.45;
const NOISE_CELLS: usize = 4;
pub const MANIFEST: &str = "manifest.jsonl";
pub const CLIP_FILE: &str = "clip.vddi";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => invalid(format!("unknown split `{other}`")),
        }
    }
}

/// Generating factors of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLatents {
    /// Static class; selects the background texture.
    pub bg_class: usize,
    /// Per-video brightness offset of the background.
    pub bg_offset: f64,
    /// Initial height above the bottom row, pixels.
    pub y0: f64,
    /// Initial vertical velocity, pixels/frame (positive is up).
    pub v0: f64,
    /// Gravity, pixels/frame^2.
    pub g: f64,
    /// Fixed sprite column.
    pub x: f64,
    pub radius: f64,
    /// Set when the trajectory leaves the frame at some time step.
    pub out_of_frame: bool,
}

impl SceneLatents {
    /// Sprite height at time `t`.
    pub fn height_at(&self, t: f64) -> f64 {
        self.y0 + self.v0 * t - 0.5 * self.g * t * t
    }

    /// Sub-pixel sprite center `(row, col)` at time `t`.
    pub fn center_at(&self, t: f64, h: usize) -> (f64, f64) {
        ((h - 1) as f64 - self.height_at(t), self.x)
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value-noise texture for a static class, in `[0, BG_MAX]` before offset.
pub fn render_background(bg_class: usize, offset: f64, h: usize, w: usize) -> Array3<f64> {
    let mut rng = stream(bg_class as u64, Domain::Generate, &[u64::MAX]);
    let tint: Vec<f64> = (0..CHANNELS).map(|_| rng.gen_range(0.3..1.0)).collect();
    let grid: Vec<f64> = (0..(NOISE_CELLS + 1) * (NOISE_CELLS + 1)).map(|_| rng.gen::<f64>()).collect();
    let node = |i: usize, j: usize| grid[i * (NOISE_CELLS + 1) + j];
    Array3::from_shape_fn((CHANNELS, h, w), |(c, y, x)| {
        let gy = y as f64 / h.max(2).saturating_sub(1) as f64 * NOISE_CELLS as f64;
        let gx = x as f64 / w.max(2).saturating_sub(1) as f64 * NOISE_CELLS as f64;
        let (iy, ix) = ((gy.floor() as usize).min(NOISE_CELLS - 1), (gx.floor() as usize).min(NOISE_CELLS - 1));
        let (fy, fx) = (smoothstep(gy - iy as f64), smoothstep(gx - ix as f64));
        let top = node(iy, ix) * (1.0 - fx) + node(iy, ix + 1) * fx;
        let bot = node(iy + 1, ix) * (1.0 - fx) + node(iy + 1, ix + 1) * fx;
        let v = top * (1.0 - fy) + bot * fy;
        (BG_MAX * (0.2 + 0.8 * v * tint[c]) + offset).clamp(0.0, BG_MAX)
    })
}

/// Sprite layer alone: raised-cosine disc of peak `SPRITE_PEAK`.
pub fn render_sprite(latents: &SceneLatents, t: usize, h: usize, w: usize) -> Array3<f64> {
    let (cy, cx) = latents.center_at(t as f64, h);
    let r = latents.radius;
    let mut plane = ndarray::Array2::<f64>::zeros((h, w));
    for ((y, x), v) in plane.indexed_iter_mut() {
        let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
        if d < r {
            *v = SPRITE_PEAK * 0.5 * (1.0 + (PI * d / r).cos());
        }
    }
    let mut out = Array3::zeros((CHANNELS, h, w));
    for mut c in out.axis_iter_mut(Axis(0)) {
        c.assign(&plane);
    }
    out
}

/// Background plus sprite at time `t`, clipped to `[0, 1]`.
pub fn render_frame(latents: &SceneLatents, t: usize, h: usize, w: usize) -> Array3<f64> {
    let bg = render_background(latents.bg_class, latents.bg_offset, h, w);
    (bg + render_sprite(latents, t, h, w)).mapv(|v| v.clamp(0.0, 1.0))
}

pub fn render_video(latents: &SceneLatents, frames: usize, h: usize, w: usize) -> Result<VideoTensor> {
    let bg = render_background(latents.bg_class, latents.bg_offset, h, w);
    let mut data = Array4::zeros((CHANNELS, frames, h, w));
    for t in 0..frames {
        let frame = (&bg + &render_sprite(latents, t, h, w)).mapv(|v| v.clamp(0.0, 1.0));
        data.index_axis_mut(Axis(1), t).assign(&frame);
    }
    VideoTensor::from_array(data)
}

/// Intensity-weighted sprite height per frame, measured from the video
/// with the known background removed.
pub fn track_sprite_height(video: &VideoTensor, latents: &SceneLatents) -> Vec<f64> {
    let (_, t, h, w) = video.shape();
    let bg = render_background(latents.bg_class, latents.bg_offset, h, w);
    (0..t)
        .map(|ti| {
            let frame = video.array().index_axis(Axis(1), ti);
            let layer = &frame.index_axis(Axis(0), 0) - &bg.index_axis(Axis(0), 0);
            let (mut mass, mut moment) = (0.0, 0.0);
            for ((y, _), &v) in layer.indexed_iter() {
                let v = v.max(0.0);
                mass += v;
                moment += v * y as f64;
            }
            (h - 1) as f64 - moment / mass
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub n_videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub g_values: Vec<f64>,
    pub bg_classes: usize,
    pub radius: f64,
    pub seed: u64,
    /// Background class tracks the dynamic class on the train split and is
    /// shifted by one class on the test split.
    pub shortcut: bool,
}

impl GenerateSpec {
    /// `n` evenly spaced gravity values up to 0.06 pixels/frame^2.
    pub fn default_g_values(n: usize) -> Vec<f64> {
        (1..=n).map(|k| 0.06 * k as f64 / n as f64).collect()
    }

    pub fn new(n_videos: usize, g_classes: usize, bg_classes: usize, frames: usize, size: usize, seed: u64) -> Self {
        Self {
            n_videos,
            frames,
            height: size,
            width: size,
            g_values: Self::default_g_values(g_classes),
            bg_classes,
            radius: 3.0,
            seed,
            shortcut: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let cells = self.g_values.len() * self.bg_classes;
        if self.g_values.is_empty() || self.bg_classes == 0 {
            return invalid("need at least one dynamic and one static class");
        }
        if self.n_videos < cells {
            return invalid(format!(
                "{} videos cannot balance {} gravity x {} background classes (need at least {cells})",
                self.n_videos,
                self.g_values.len(),
                self.bg_classes
            ));
        }
        if self.shortcut && self.bg_classes < 2 {
            return invalid("the shortcut split needs at least two background classes");
        }
        if self.frames < 3 || self.height < 4 || self.width < 4 {
            return invalid("videos need at least 3 frames and 4x4 pixels");
        }
        if !(self.radius > 0.0) || 2.0 * self.radius >= self.height.min(self.width) as f64 {
            return invalid("sprite radius must be positive and fit inside the frame");
        }
        if self.g_values.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return invalid("gravity values must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub dims: [usize; 4],
    pub dynamic_label: usize,
    pub static_label: usize,
    pub split: Split,
    pub latents: SceneLatents,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub videos: Vec<VideoTensor>,
    pub manifest: Vec<VideoRecord>,
}

impl SynthDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.manifest.len()).filter(|&i| self.manifest[i].split == split).collect()
    }

    pub fn videos_of(&self, split: Split) -> Vec<VideoTensor> {
        self.indices(split).into_iter().map(|i| self.videos[i].clone()).collect()
    }
}

fn lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

/// Class cell and split for video `i`.
fn assign(spec: &GenerateSpec, i: usize) -> (usize, usize, Split) {
    let ng = spec.g_values.len();
    let nb = spec.bg_classes;
    if spec.shortcut {
        let g = i % ng;
        let split = if (i / ng).is_multiple_of(2) { Split::Train } else { Split::Test };
        let bg = match split {
            Split::Train => g % nb,
            Split::Test => (g + 1) % nb,
        };
        (g, bg, split)
    } else {
        let cells = ng * nb;
        let c = i % cells;
        let split = if (i / cells).is_multiple_of(2) { Split::Train } else { Split::Test };
        // Diagonal walk over the class grid: every prefix stays balanced
        // within one on both labels, and each round visits every cell once.
        let block = lcm(ng, nb);
        (c % ng, (c + c / block) % nb, split)
    }
}

/// Places the apex of the parabola inside the frame so the whole
/// trajectory stays renderable.
fn sample_latents<R: Rng>(spec: &GenerateSpec, g_class: usize, bg_class: usize, rng: &mut R) -> SceneLatents {
    let g = spec.g_values[g_class];
    let r = spec.radius;
    let (lo, hi) = (r, (spec.height - 1) as f64 - r);
    let last = (spec.frames - 1) as f64;
    let t_apex = rng.gen_range(0.25..0.75) * last;
    let fall = 0.5 * g * t_apex.max(last - t_apex).powi(2);
    let apex_lo = (lo + fall).min(hi);
    let apex = apex_lo + (hi - apex_lo) * rng.gen::<f64>();
    let v0 = g * t_apex;
    let y0 = apex - 0.5 * g * t_apex * t_apex;
    let x = rng.gen_range(r..(spec.width - 1) as f64 - r);
    let bg_offset = rng.gen_range(-0.03..0.03);
    let mut latents = SceneLatents { bg_class, bg_offset, y0, v0, g, x, radius: r, out_of_frame: false };
    latents.out_of_frame = (0..spec.frames).any(|t| {
        let y = latents.height_at(t as f64);
        y < lo - 1e-9 || y > hi + 1e-9
    });
    latents
}

fn generate_one(spec: &GenerateSpec, i: usize) -> Result<(VideoTensor, VideoRecord)> {
    let (g_class, bg_class, split) = assign(spec, i);
    let mut rng = stream(spec.seed, Domain::Generate, &[i as u64]);
    let latents = sample_latents(spec, g_class, bg_class, &mut rng);
    let video = render_video(&latents, spec.frames, spec.height, spec.width)?;
    let record = VideoRecord {
        id: format!("video_{i:05}"),
        dims: [CHANNELS, spec.frames, spec.height, spec.width],
        dynamic_label: g_class,
        static_label: bg_class,
        split,
        latents,
    };
    Ok((video, record))
}

/// Generates the dataset on a pool of `workers` threads; the output does
/// not depend on the worker count.
pub fn generate_with_workers(spec: &GenerateSpec, workers: usize) -> Result<SynthDataset> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    let items: Vec<(VideoTensor, VideoRecord)> =
        pool.install(|| (0..spec.n_videos).into_par_iter().map(|i| generate_one(spec, i)).collect::<Result<_>>())?;
    let (videos, manifest) = items.into_iter().unzip();
    Ok(SynthDataset { videos, manifest })
}

pub fn generate(spec: &GenerateSpec) -> Result<SynthDataset> {
    generate_with_workers(spec, 1)
}

/// Writes one directory per video plus a JSON-lines manifest.
pub fn save_dataset(ds: &SynthDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join(MANIFEST))?);
    for (video, rec) in ds.videos.iter().zip(&ds.manifest) {
        let vdir = dir.join(&rec.id);
        std::fs::create_dir_all(&vdir)?;
        let (c, t, h, w) = video.shape();
        tensorfile::save(&vdir.join(CLIP_FILE), &[NamedTensor::from_f64("video", &[c, t, h, w], video.as_slice().iter().copied())])?;
        serde_json::to_writer(&mut manifest, rec)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SynthDataset> {
    let path = dir.join(MANIFEST);
    let file = std::fs::File::open(&path)?;
    let mut videos = Vec::new();
    let mut manifest = Vec::new();
    for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VideoRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.clone(),
            message: format!("line {}: {e}", line_no + 1),
        })?;
        let clip_path = dir.join(&rec.id).join(CLIP_FILE);
        let tensors = tensorfile::load(&clip_path)?;
        let t = tensors
            .iter()
            .find(|t| t.name == "video")
            .ok_or_else(|| Error::Format { path: clip_path.clone(), message: "no `video` tensor".into() })?;
        if t.dims != rec.dims {
            return Err(Error::Format { path: clip_path, message: format!("dims {:?} disagree with manifest {:?}", t.dims, rec.dims) });
        }
        let [c, f, h, w] = rec.dims;
        videos.push(VideoTensor::new(c, f, h, w, t.to_f64())?);
        manifest.push(rec);
    }
    if videos.is_empty() {
        return Err(Error::Format { path, message: "manifest lists no videos".into() });
    }
    Ok(SynthDataset { videos, manifest })
}
