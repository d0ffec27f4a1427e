//! Clip tensors and temporal forward differences.
//!
//! A clip is stored as a dense `(channels, frames, height, width)` array.
//! The first difference maps `x(n)` to `x(n+1) - x(n)` and the second to
//! `x(n+2) - 2 x(n+1) + x(n)`; both shorten the clip along time.

use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};

/// Dense `C x T x H x W` clip.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    data: Array4<f64>,
}

impl VideoTensor {
    pub fn new(channels: usize, frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::TooFewFrames { frames, needed: 1 });
        }
        let expected = channels * frames * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match {channels}x{frames}x{height}x{width}",
                data.len()
            )));
        }
        let data = Array4::from_shape_vec((channels, frames, height, width), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn from_array(data: Array4<f64>) -> Result<Self> {
        if data.shape()[1] == 0 {
            return Err(Error::TooFewFrames { frames: 0, needed: 1 });
        }
        // Standard layout keeps the flat (c,t,h,w) ordering meaningful.
        Ok(Self { data: data.as_standard_layout().into_owned() })
    }

    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        assert!(frames >= 1, "clip needs at least one frame");
        Self { data: Array4::zeros((channels, frames, height, width)) }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    /// `(channels, frames, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.channels(), self.frames(), self.height(), self.width())
    }

    pub fn array(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array4<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array4<f64> {
        self.data
    }

    /// Flat row-major `(c,t,h,w)` values.
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    /// One frame as a `C x H x W` view.
    pub fn frame(&self, t: usize) -> Result<ArrayView3<'_, f64>> {
        if t >= self.frames() {
            return Err(Error::FrameIndex { index: t, frames: self.frames() });
        }
        Ok(self.data.index_axis(Axis(1), t))
    }

    /// Elementwise `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &VideoTensor, b: f64) -> Result<VideoTensor> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let mut out = self.data.clone();
        Zip::from(&mut out).and(&other.data).for_each(|o, &y| *o = a * *o + b * y);
        Ok(Self { data: out })
    }

    /// Adds a time-constant `C x H x W` image to every frame.
    pub fn add_static(&self, image: &Array3<f64>) -> Result<VideoTensor> {
        let (c, _, h, w) = self.shape();
        if image.shape() != [c, h, w] {
            return Err(Error::Shape(format!("static image {:?} vs frame ({c},{h},{w})", image.shape())));
        }
        let mut out = self.data.clone();
        for mut frame in out.axis_iter_mut(Axis(1)) {
            frame += image;
        }
        Ok(Self { data: out })
    }
}

/// First forward difference along time.
pub fn diff1(x: &VideoTensor) -> Result<VideoTensor> {
    let t = x.frames();
    if t < 2 {
        return Err(Error::TooFewFrames { frames: t, needed: 2 });
    }
    let a = &x.data;
    let out = &a.slice(s![.., 1.., .., ..]) - &a.slice(s![.., ..t - 1, .., ..]);
    Ok(VideoTensor { data: out })
}

/// Second forward difference along time.
pub fn diff2(x: &VideoTensor) -> Result<VideoTensor> {
    let t = x.frames();
    if t < 3 {
        return Err(Error::TooFewFrames { frames: t, needed: 3 });
    }
    // Evaluated as a difference of first differences so that it agrees
    // bit-for-bit with diff1 applied twice.
    let a = &x.data;
    let lo = &a.slice(s![.., 1..t - 1, .., ..]) - &a.slice(s![.., ..t - 2, .., ..]);
    let hi = &a.slice(s![.., 2.., .., ..]) - &a.slice(s![.., 1..t - 1, .., ..]);
    Ok(VideoTensor { data: hi - lo })
}

/// Forward difference of order 0, 1 or 2.
pub fn diff_order(x: &VideoTensor, order: u8) -> Result<VideoTensor> {
    match order {
        0 => Ok(x.clone()),
        1 => diff1(x),
        2 => diff2(x),
        k => Err(Error::Invalid(format!("derivative order {k} not supported (max 2)"))),
    }
}

/// Keeps the first `t` frames.
pub fn truncate_frames(x: &VideoTensor, t: usize) -> Result<VideoTensor> {
    if t > x.frames() {
        return Err(Error::TooFewFrames { frames: x.frames(), needed: t });
    }
    if t == 0 {
        return Err(Error::Invalid("cannot truncate to zero frames".into()));
    }
    Ok(VideoTensor { data: x.data.slice(s![.., ..t, .., ..]).to_owned() })
}

/// Newton forward-difference reconstruction of frame `t` around anchor `n`:
/// `x(n) + (t-n) d1(n) + (t-n)(t-n-1)/2 d2(n)`.
///
/// Exact at `t` in `{n, n+1, n+2}`.
pub fn taylor_reconstruct(x: &VideoTensor, n: usize, t: usize) -> Result<Array3<f64>> {
    if n + 2 >= x.frames() {
        return Err(Error::FrameIndex { index: n + 2, frames: x.frames() });
    }
    if t < n || t > n + 2 {
        return Err(Error::FrameIndex { index: t, frames: x.frames() });
    }
    let base = x.frame(n)?.to_owned();
    let offset = t - n;
    if offset == 0 {
        return Ok(base);
    }
    let d1 = &x.frame(n + 1)? - &x.frame(n)?;
    if offset == 1 {
        return Ok(base + &d1);
    }
    let d1_next = &x.frame(n + 2)? - &x.frame(n + 1)?;
    let d2 = &d1_next - &d1;
    // offset 2: x(n) + 2 d1 + d2
    Ok(base + &d1 * 2.0 + &d2)
}

/// Ordered clips sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipBatch {
    items: Vec<VideoTensor>,
}

impl ClipBatch {
    pub fn new(items: Vec<VideoTensor>) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Invalid("empty clip batch".into()))?;
        let shape = first.shape();
        if let Some((i, bad)) = items.iter().enumerate().find(|(_, v)| v.shape() != shape) {
            return Err(Error::Shape(format!("item {i} has shape {:?}, expected {shape:?}", bad.shape())));
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[VideoTensor] {
        &self.items
    }

    pub fn clip_shape(&self) -> (usize, usize, usize, usize) {
        self.items[0].shape()
    }

    /// Rows are `(item, frame)` pairs in item-major order; columns are the
    /// flattened `(c, h, w)` pixels of that frame.
    pub fn frame_matrix(&self) -> Array2<f64> {
        let (c, t, h, w) = self.clip_shape();
        let feat = c * h * w;
        let mut out = Array2::zeros((self.items.len() * t, feat));
        for (b, item) in self.items.iter().enumerate() {
            for f in 0..t {
                let frame = item.data.index_axis(Axis(1), f);
                let mut row = out.row_mut(b * t + f);
                for (dst, &src) in row.iter_mut().zip(frame.iter()) {
                    *dst = src;
                }
            }
        }
        out
    }
}
