//! Clip-wise spatial augmentation.
//!
//! One set of random parameters is drawn per clip and applied identically to
//! every frame: flip, random resized crop (bilinear), Gaussian blur, color
//! jitter, random gray, and finally per-channel normalization.

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::video::VideoTensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

const CROP_ATTEMPTS: usize = 10;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub crop_scale: (f64, f64),
    pub crop_aspect: (f64, f64),
    pub out_height: usize,
    pub out_width: usize,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub jitter_prob: f64,
    pub jitter_brightness: f64,
    pub jitter_contrast: f64,
    pub jitter_saturation: f64,
    pub jitter_hue: f64,
    pub gray_prob: f64,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            crop_scale: (0.08, 1.0),
            crop_aspect: (3.0 / 4.0, 4.0 / 3.0),
            out_height: 112,
            out_width: 112,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
            jitter_prob: 0.8,
            jitter_brightness: 0.2,
            jitter_contrast: 0.2,
            jitter_saturation: 0.2,
            jitter_hue: 0.05,
            gray_prob: 0.5,
            norm_mean: IMAGENET_MEAN.to_vec(),
            norm_std: IMAGENET_STD.to_vec(),
        }
    }
}

impl AugmentConfig {
    /// Pipeline that only resizes to the output size and normalizes.
    pub fn identity(out_height: usize, out_width: usize, aspect: f64) -> Self {
        Self {
            flip_prob: 0.0,
            crop_scale: (1.0, 1.0),
            crop_aspect: (aspect, aspect),
            out_height,
            out_width,
            blur_prob: 0.0,
            jitter_prob: 0.0,
            gray_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Error::Config { field: format!("augment.{name}"), message: msg };
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("blur_prob", self.blur_prob),
            ("jitter_prob", self.jitter_prob),
            ("gray_prob", self.gray_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(field(name, format!("probability {p} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(field("crop_scale", format!("need 0 < min <= max <= 1, got ({lo}, {hi})")));
        }
        let (lo, hi) = self.crop_aspect;
        if !(lo > 0.0 && lo <= hi) {
            return Err(field("crop_aspect", format!("need 0 < min <= max, got ({lo}, {hi})")));
        }
        let (lo, hi) = self.blur_sigma;
        if !(lo > 0.0 && lo <= hi) {
            return Err(field("blur_sigma", format!("need 0 < min <= max, got ({lo}, {hi})")));
        }
        if self.out_height == 0 || self.out_width == 0 {
            return Err(field("out_height", "output size must be positive".into()));
        }
        for (name, s) in [
            ("jitter_brightness", self.jitter_brightness),
            ("jitter_contrast", self.jitter_contrast),
            ("jitter_saturation", self.jitter_saturation),
        ] {
            if !(0.0..=1.0).contains(&s) {
                return Err(field(name, format!("strength {s} outside [0, 1]")));
            }
        }
        if !(0.0..=0.5).contains(&self.jitter_hue) {
            return Err(field("jitter_hue", format!("hue shift {} outside [0, 0.5]", self.jitter_hue)));
        }
        if self.norm_mean.len() != self.norm_std.len() {
            return Err(field("norm_std", "norm_mean and norm_std lengths differ".into()));
        }
        if let Some(s) = self.norm_std.iter().find(|s| !(**s > 0.0)) {
            return Err(field("norm_std", format!("std must be strictly positive, got {s}")));
        }
        Ok(())
    }
}

/// Crop rectangle in source pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub order: [JitterOp; 4],
}

/// Per-clip audit trail of the random parameters that were applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub crop_rect: CropRect,
    pub flipped: bool,
    pub blur_sigma: Option<f64>,
    pub jitter: Option<JitterFactors>,
    pub grayed: bool,
}

/// Minimum number of source frames for a window of `t_plus` frames at `stride`.
pub fn window_span(t_plus: usize, stride: usize) -> usize {
    (t_plus - 1) * stride + 1
}

/// Extracts `t_plus` frames starting at `start`, every `stride` frames.
pub fn extract_clip(video: &VideoTensor, start: usize, t_plus: usize, stride: usize) -> Result<VideoTensor> {
    if t_plus == 0 || stride == 0 {
        return invalid("clip length and stride must be positive");
    }
    let span = window_span(t_plus, stride);
    if start + span > video.frames() {
        return Err(Error::TooFewFrames { frames: video.frames(), needed: start + span });
    }
    let idx: Vec<usize> = (0..t_plus).map(|i| start + i * stride).collect();
    VideoTensor::from_array(video.array().select(Axis(1), &idx))
}

/// Two independent temporal windows with uniformly drawn start indices.
pub fn sample_clip_pair<R: Rng + ?Sized>(
    video: &VideoTensor,
    t_plus: usize,
    stride: usize,
    rng: &mut R,
) -> Result<(VideoTensor, VideoTensor)> {
    if t_plus == 0 || stride == 0 {
        return invalid("clip length and stride must be positive");
    }
    let span = window_span(t_plus, stride);
    if span > video.frames() {
        return Err(Error::TooFewFrames { frames: video.frames(), needed: span });
    }
    let max_start = video.frames() - span;
    let a = rng.gen_range(0..=max_start);
    let b = rng.gen_range(0..=max_start);
    Ok((extract_clip(video, a, t_plus, stride)?, extract_clip(video, b, t_plus, stride)?))
}

/// Per-channel `(x - mean) / std`.
pub fn normalize(clip: &VideoTensor, mean: &[f64], std: &[f64]) -> Result<VideoTensor> {
    if mean.len() != clip.channels() || std.len() != clip.channels() {
        return Err(Error::Shape(format!(
            "normalization has {}/{} channels, clip has {}",
            mean.len(),
            std.len(),
            clip.channels()
        )));
    }
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        return invalid(format!("std must be strictly positive, got {s}"));
    }
    let mut out = clip.array().clone();
    for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (m, s) = (mean[c], std[c]);
        plane.mapv_inplace(|v| (v - m) / s);
    }
    VideoTensor::from_array(out)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Random-resized-crop rectangle: area fraction uniform in `scale`, aspect
/// log-uniform in `aspect`, up to ten attempts before a center crop.
pub fn sample_crop<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    scale: (f64, f64),
    aspect: (f64, f64),
    rng: &mut R,
) -> CropRect {
    let area = (height * width) as f64;
    let (log_lo, log_hi) = (aspect.0.ln(), aspect.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * uniform(rng, scale.0, scale.1);
        let ratio = uniform(rng, log_lo, log_hi).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let x = rng.gen_range(0..=width - w);
            let y = rng.gen_range(0..=height - h);
            return CropRect { x, y, w, h };
        }
    }
    center_crop(height, width, aspect)
}

/// Largest centered rectangle whose aspect falls inside `aspect`.
pub fn center_crop(height: usize, width: usize, aspect: (f64, f64)) -> CropRect {
    let in_ratio = width as f64 / height as f64;
    let (w, h) = if in_ratio < aspect.0 {
        (width, ((width as f64 / aspect.0).round() as usize).clamp(1, height))
    } else if in_ratio > aspect.1 {
        (((height as f64 * aspect.1).round() as usize).clamp(1, width), height)
    } else {
        (width, height)
    };
    CropRect { x: (width - w) / 2, y: (height - h) / 2, w, h }
}

/// Bilinear crop-and-resize with the half-pixel (align-corners=false)
/// convention: `src = (dst + 0.5) * scale - 0.5`, clamped to the crop.
pub fn resized_crop(clip: &Array4<f64>, rect: CropRect, out_h: usize, out_w: usize) -> Array4<f64> {
    let (c, t) = (clip.shape()[0], clip.shape()[1]);
    let sy = rect.h as f64 / out_h as f64;
    let sx = rect.w as f64 / out_w as f64;
    let taps = |out: usize, scale: f64, len: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = taps(out_h, sy, rect.h);
    let xs = taps(out_w, sx, rect.w);
    let mut out = Array4::zeros((c, t, out_h, out_w));
    for ci in 0..c {
        for ti in 0..t {
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let p = |y: usize, x: usize| clip[[ci, ti, rect.y + y, rect.x + x]];
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    out[[ci, ti, oy, ox]] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    out
}

fn flip_horizontal(clip: &mut Array4<f64>) {
    clip.invert_axis(Axis(3));
    let owned = clip.as_standard_layout().into_owned();
    *clip = owned;
}

/// Normalized 3-tap Gaussian weights for `sigma`.
pub fn gaussian_kernel3(sigma: f64) -> [f64; 3] {
    let side = (-1.0 / (2.0 * sigma * sigma)).exp();
    let sum = 1.0 + 2.0 * side;
    [side / sum, 1.0 / sum, side / sum]
}

/// Separable 3x3 blur with clamp-to-edge borders.
pub fn gaussian_blur(clip: &mut Array4<f64>, sigma: f64) {
    let k = gaussian_kernel3(sigma);
    let (c, t, h, w) = clip.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for ci in 0..c {
        for ti in 0..t {
            let mut plane = clip.index_axis_mut(Axis(0), ci);
            let mut plane = plane.index_axis_mut(Axis(0), ti);
            for y in 0..h {
                for x in 0..w {
                    let l = plane[[y, x.saturating_sub(1)]];
                    let r = plane[[y, (x + 1).min(w - 1)]];
                    tmp[[y, x]] = k[0] * l + k[1] * plane[[y, x]] + k[2] * r;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let u = tmp[[y.saturating_sub(1), x]];
                    let d = tmp[[(y + 1).min(h - 1), x]];
                    plane[[y, x]] = k[0] * u + k[1] * tmp[[y, x]] + k[2] * d;
                }
            }
        }
    }
}

fn luma(rgb: [f64; 3]) -> f64 {
    LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, v]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn for_each_pixel(clip: &mut Array4<f64>, mut f: impl FnMut([f64; 3]) -> [f64; 3]) {
    let (_, t, h, w) = clip.dim();
    for ti in 0..t {
        for y in 0..h {
            for x in 0..w {
                let px = [clip[[0, ti, y, x]], clip[[1, ti, y, x]], clip[[2, ti, y, x]]];
                let out = f(px);
                for c in 0..3 {
                    clip[[c, ti, y, x]] = out[c];
                }
            }
        }
    }
}

fn apply_jitter(clip: &mut Array4<f64>, j: &JitterFactors) {
    let rgb = clip.shape()[0] == 3;
    for op in j.order {
        match op {
            JitterOp::Brightness => clip.mapv_inplace(|v| (v * j.brightness).clamp(0.0, 1.0)),
            JitterOp::Contrast => {
                let f = j.contrast;
                let t = clip.shape()[1];
                for ti in 0..t {
                    // contrast blends toward the frame's mean gray level
                    let mean = if rgb {
                        let frame = clip.index_axis(Axis(1), ti);
                        let n = (frame.shape()[1] * frame.shape()[2]) as f64;
                        (0..3).map(|c| LUMA[c] * frame.index_axis(Axis(0), c).sum()).sum::<f64>() / n
                    } else {
                        clip.index_axis(Axis(1), ti).mean().unwrap_or(0.0)
                    };
                    clip.index_axis_mut(Axis(1), ti)
                        .mapv_inplace(|v| (f * v + (1.0 - f) * mean).clamp(0.0, 1.0));
                }
            }
            JitterOp::Saturation if rgb => {
                let f = j.saturation;
                for_each_pixel(clip, |px| {
                    let g = luma(px);
                    px.map(|v| (f * v + (1.0 - f) * g).clamp(0.0, 1.0))
                });
            }
            JitterOp::Hue if rgb => {
                let shift = j.hue;
                for_each_pixel(clip, |px| {
                    let [h, s, v] = rgb_to_hsv(px.map(|v| v.clamp(0.0, 1.0)));
                    hsv_to_rgb([h + shift, s, v])
                });
            }
            // Saturation and hue need three color channels.
            JitterOp::Saturation | JitterOp::Hue => {}
        }
    }
}

fn apply_gray(clip: &mut Array4<f64>) {
    if clip.shape()[0] == 3 {
        for_each_pixel(clip, |px| {
            let g = luma(px);
            [g, g, g]
        });
    }
}

/// Draws one parameter set for the whole clip and applies it to every frame.
pub fn spatial_augment<R: Rng + ?Sized>(
    clip: &VideoTensor,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(VideoTensor, AugmentRecord)> {
    cfg.validate()?;
    let (_, _, h, w) = clip.shape();
    if h == 0 || w == 0 {
        return invalid("clip has empty frames");
    }
    // Draw every random quantity up front, in a fixed order.
    let flipped = rng.gen::<f64>() < cfg.flip_prob;
    let crop_rect = sample_crop(h, w, cfg.crop_scale, cfg.crop_aspect, rng);
    let blur_sigma = (rng.gen::<f64>() < cfg.blur_prob).then(|| uniform(rng, cfg.blur_sigma.0, cfg.blur_sigma.1));
    let jitter = if rng.gen::<f64>() < cfg.jitter_prob {
        let mut order = [JitterOp::Brightness, JitterOp::Contrast, JitterOp::Saturation, JitterOp::Hue];
        order.shuffle(rng);
        Some(JitterFactors {
            brightness: uniform(rng, 1.0 - cfg.jitter_brightness, 1.0 + cfg.jitter_brightness),
            contrast: uniform(rng, 1.0 - cfg.jitter_contrast, 1.0 + cfg.jitter_contrast),
            saturation: uniform(rng, 1.0 - cfg.jitter_saturation, 1.0 + cfg.jitter_saturation),
            hue: uniform(rng, -cfg.jitter_hue, cfg.jitter_hue),
            order,
        })
    } else {
        None
    };
    let grayed = rng.gen::<f64>() < cfg.gray_prob;

    let mut data = clip.array().clone();
    if flipped {
        flip_horizontal(&mut data);
    }
    let mut data = resized_crop(&data, crop_rect, cfg.out_height, cfg.out_width);
    if let Some(sigma) = blur_sigma {
        gaussian_blur(&mut data, sigma);
    }
    if let Some(j) = &jitter {
        apply_jitter(&mut data, j);
    }
    if grayed {
        apply_gray(&mut data);
    }
    let out = normalize(&VideoTensor::from_array(data)?, &cfg.norm_mean, &cfg.norm_std)?;
    Ok((out, AugmentRecord { crop_rect, flipped, blur_sigma, jitter, grayed }))
}

/// Deterministic evaluation transform: center crop, resize, normalize.
pub fn eval_transform(clip: &VideoTensor, cfg: &AugmentConfig) -> Result<VideoTensor> {
    let (_, _, h, w) = clip.shape();
    let aspect = cfg.out_width as f64 / cfg.out_height as f64;
    let rect = center_crop(h, w, (aspect, aspect));
    let data = resized_crop(clip.array(), rect, cfg.out_height, cfg.out_width);
    normalize(&VideoTensor::from_array(data)?, &cfg.norm_mean, &cfg.norm_std)
}
