//! Face and body parameter sequences and the preprocessing applied before
//! quantization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::savgol::SavitzkyGolay;

pub const EXPRESSION_DIMS: usize = 50;
pub const JAW_DIMS: usize = 3;
pub const FACE_WIDTH: usize = EXPRESSION_DIMS + JAW_DIMS;

pub const UPPER_BODY_DIMS: usize = 27;
pub const HAND_DIMS: usize = 45;
pub const BODY_WIDTH: usize = UPPER_BODY_DIMS + 2 * HAND_DIMS;

pub const DEFAULT_FPS: f32 = 25.0;
pub const REFERENCE_WINDOW: usize = 512;

/// Channel ranges inside a 53-d face frame.
pub const FACE_EXPRESSION: Range<usize> = 0..EXPRESSION_DIMS;
pub const FACE_JAW: Range<usize> = EXPRESSION_DIMS..FACE_WIDTH;

/// Channel ranges inside a 117-d body frame, in storage order.
pub const BODY_UPPER: Range<usize> = 0..UPPER_BODY_DIMS;
pub const BODY_RIGHT_HAND: Range<usize> = UPPER_BODY_DIMS..UPPER_BODY_DIMS + HAND_DIMS;
pub const BODY_LEFT_HAND: Range<usize> = UPPER_BODY_DIMS + HAND_DIMS..BODY_WIDTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Face,
    Body,
}

impl StreamKind {
    pub fn width(self) -> usize {
        match self {
            StreamKind::Face => FACE_WIDTH,
            StreamKind::Body => BODY_WIDTH,
        }
    }

    pub fn from_width(width: usize) -> Option<Self> {
        match width {
            FACE_WIDTH => Some(StreamKind::Face),
            BODY_WIDTH => Some(StreamKind::Body),
            _ => None,
        }
    }
}

/// Expression coefficients and jaw pose (axis-angle, radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFrame {
    pub psi: [f32; EXPRESSION_DIMS],
    pub theta_jaw: [f32; JAW_DIMS],
}

impl FaceFrame {
    pub fn from_slice(v: &[f32]) -> Result<Self> {
        check_frame(v, FACE_WIDTH)?;
        let mut psi = [0.0; EXPRESSION_DIMS];
        let mut theta_jaw = [0.0; JAW_DIMS];
        psi.copy_from_slice(&v[FACE_EXPRESSION]);
        theta_jaw.copy_from_slice(&v[FACE_JAW]);
        Ok(Self { psi, theta_jaw })
    }

    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(FACE_WIDTH);
        v.extend_from_slice(&self.psi);
        v.extend_from_slice(&self.theta_jaw);
        v
    }
}

/// Upper-body, right-hand and left-hand joint rotations (axis-angle, radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyFrame {
    pub theta_ubody: [f32; UPPER_BODY_DIMS],
    pub theta_rhand: [f32; HAND_DIMS],
    pub theta_lhand: [f32; HAND_DIMS],
}

impl BodyFrame {
    pub fn from_slice(v: &[f32]) -> Result<Self> {
        check_frame(v, BODY_WIDTH)?;
        let mut theta_ubody = [0.0; UPPER_BODY_DIMS];
        let mut theta_rhand = [0.0; HAND_DIMS];
        let mut theta_lhand = [0.0; HAND_DIMS];
        theta_ubody.copy_from_slice(&v[BODY_UPPER]);
        theta_rhand.copy_from_slice(&v[BODY_RIGHT_HAND]);
        theta_lhand.copy_from_slice(&v[BODY_LEFT_HAND]);
        Ok(Self { theta_ubody, theta_rhand, theta_lhand })
    }

    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(BODY_WIDTH);
        v.extend_from_slice(&self.theta_ubody);
        v.extend_from_slice(&self.theta_rhand);
        v.extend_from_slice(&self.theta_lhand);
        v
    }
}

fn check_frame(v: &[f32], width: usize) -> Result<()> {
    if v.len() != width {
        return Err(Error::ShapeMismatch { expected: vec![width], actual: vec![v.len()] });
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("non-finite value at channel {i}")));
    }
    Ok(())
}

/// Fixed window length and frame width used by a codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub window: usize,
    pub width: usize,
}

impl WindowSpec {
    pub fn new(window: usize, width: usize) -> Result<Self> {
        if window == 0 || width == 0 {
            return Err(Error::invalid("window and width must be positive"));
        }
        Ok(Self { window, width })
    }

    pub fn reference(kind: StreamKind) -> Self {
        Self { window: REFERENCE_WINDOW, width: kind.width() }
    }

    /// Errors unless the window splits evenly into `ratio`-frame code steps.
    pub fn check_ratio(&self, ratio: usize) -> Result<usize> {
        if ratio == 0 || !self.window.is_multiple_of(ratio) {
            return Err(Error::invalid(format!("window {} is not divisible by downsample ratio {ratio}", self.window)));
        }
        Ok(self.window / ratio)
    }
}

/// Fixed-rate sequence of parameter frames, stored channel-major
/// (`data[c * len + t]`), with a per-frame validity mask.
///
/// Masked-out frames are always all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    width: usize,
    len: usize,
    fps: f32,
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl MotionSequence {
    /// Builds a sequence from channel-major data.
    pub fn from_channel_major(width: usize, fps: f32, data: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("frame width must be positive"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        let len = mask.len();
        if data.len() != width * len {
            return Err(Error::ShapeMismatch { expected: vec![width, len], actual: vec![data.len()] });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at channel {}, frame {}",
                i / len.max(1),
                i % len.max(1)
            )));
        }
        for (t, _) in mask.iter().enumerate().filter(|(_, m)| !**m) {
            if (0..width).any(|c| data[c * len + t] != 0.0) {
                return Err(Error::Validation(format!("masked-out frame {t} is not zero")));
            }
        }
        Ok(Self { width, len, fps, data, mask })
    }

    /// Builds a fully observed sequence from row-major frames.
    pub fn from_frames(width: usize, fps: f32, frames: &[Vec<f32>]) -> Result<Self> {
        let len = frames.len();
        let mut data = vec![0.0; width * len];
        for (t, f) in frames.iter().enumerate() {
            if f.len() != width {
                return Err(Error::ShapeMismatch { expected: vec![width], actual: vec![f.len()] });
            }
            for (c, &v) in f.iter().enumerate() {
                data[c * len + t] = v;
            }
        }
        Self::from_channel_major(width, fps, data, vec![true; len])
    }

    pub fn from_face_frames(frames: &[FaceFrame], fps: f32) -> Result<Self> {
        let rows: Vec<Vec<f32>> = frames.iter().map(FaceFrame::to_vec).collect();
        Self::from_frames(FACE_WIDTH, fps, &rows)
    }

    pub fn from_body_frames(frames: &[BodyFrame], fps: f32) -> Result<Self> {
        let rows: Vec<Vec<f32>> = frames.iter().map(BodyFrame::to_vec).collect();
        Self::from_frames(BODY_WIDTH, fps, &rows)
    }

    pub fn zeros(width: usize, len: usize, fps: f32) -> Self {
        Self { width, len, fps, data: vec![0.0; width * len], mask: vec![false; len] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn kind(&self) -> Option<StreamKind> {
        StreamKind::from_width(self.width)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_frames(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Channel-major values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn frame(&self, t: usize) -> Vec<f32> {
        (0..self.width).map(|c| self.data[c * self.len + t]).collect()
    }

    pub fn face_frames(&self) -> Result<Vec<FaceFrame>> {
        (0..self.len).map(|t| FaceFrame::from_slice(&self.frame(t))).collect()
    }

    pub fn body_frames(&self) -> Result<Vec<BodyFrame>> {
        (0..self.len).map(|t| BodyFrame::from_slice(&self.frame(t))).collect()
    }

    /// Channel-major data converted to `T`, for feeding the codec.
    pub fn to_real<T: Real>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::lit(v as f64)).collect()
    }

    /// Savitzky–Golay smoothing of every channel.
    ///
    /// Each contiguous run of valid frames is filtered on its own so padding
    /// never leaks into observed frames; runs shorter than `window` are left
    /// unchanged.
    pub fn smooth(&self, window: usize, polyorder: usize) -> Result<Self> {
        let filter = SavitzkyGolay::new(window, polyorder)?;
        let mut out = self.clone();
        for run in valid_runs(&self.mask) {
            for c in 0..self.width {
                let base = c * self.len;
                let seg = &self.data[base + run.start..base + run.end];
                let filtered = filter.apply(seg);
                out.data[base + run.start..base + run.end].copy_from_slice(&filtered);
            }
        }
        Ok(out)
    }

    /// Pads with masked zero frames or truncates (keeping the head) to exactly
    /// `spec.window` frames.
    pub fn pad_or_truncate(&self, spec: WindowSpec) -> Result<Self> {
        if spec.width != self.width {
            return Err(Error::ShapeMismatch { expected: vec![spec.width], actual: vec![self.width] });
        }
        let w = spec.window;
        let keep = self.len.min(w);
        let mut data = vec![0.0; self.width * w];
        for c in 0..self.width {
            data[c * w..c * w + keep].copy_from_slice(&self.channel(c)[..keep]);
        }
        let mut mask = vec![false; w];
        mask[..keep].copy_from_slice(&self.mask[..keep]);
        Ok(Self { width: self.width, len: w, fps: self.fps, data, mask })
    }

    /// Splits into consecutive `spec.window`-frame windows, zero-padding the last.
    pub fn split_windows(&self, spec: WindowSpec) -> Result<Vec<Self>> {
        if self.len <= spec.window {
            return Ok(vec![self.pad_or_truncate(spec)?]);
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.len {
            let end = (start + spec.window).min(self.len);
            out.push(self.slice(start..end).pad_or_truncate(spec)?);
            start = end;
        }
        Ok(out)
    }

    pub fn slice(&self, range: Range<usize>) -> Self {
        let n = range.len();
        let mut data = Vec::with_capacity(self.width * n);
        for c in 0..self.width {
            data.extend_from_slice(&self.channel(c)[range.clone()]);
        }
        Self { width: self.width, len: n, fps: self.fps, data, mask: self.mask[range].to_vec() }
    }

    /// Frame-wise velocity of the whole sequence (`width × (len-1)`).
    pub fn velocity(&self) -> Result<Vec<f32>> {
        velocity(&self.data, self.width, self.len)
    }
}

fn valid_runs(mask: &[bool]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = None;
    for (t, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push(s..t);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push(s..mask.len());
    }
    runs
}

/// Frame-wise difference `out[c][l] = x[c][l+1] - x[c][l]` of a channel-major
/// `channels × frames` matrix.
pub fn velocity<T: Real>(x: &[T], channels: usize, frames: usize) -> Result<Vec<T>> {
    if frames < 2 {
        return Err(Error::invalid(format!("velocity needs at least 2 frames, got {frames}")));
    }
    if x.len() != channels * frames {
        return Err(Error::ShapeMismatch { expected: vec![channels, frames], actual: vec![x.len()] });
    }
    let mut out = Vec::with_capacity(channels * (frames - 1));
    for c in 0..channels {
        let row = &x[c * frames..(c + 1) * frames];
        out.extend(row.windows(2).map(|w| w[1] - w[0]));
    }
    Ok(out)
}

/// Raw per-frame face feature layouts accepted at ingest.
///
/// Both carry 100 shape coefficients followed by 50 expression coefficients;
/// the 156-wide layout adds a global-rotation triple before the jaw pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawFaceLayout {
    Width153,
    Width156,
}

impl RawFaceLayout {
    pub fn from_width(width: usize) -> Option<Self> {
        match width {
            153 => Some(Self::Width153),
            156 => Some(Self::Width156),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Self::Width153 => 153,
            Self::Width156 => 156,
        }
    }

    pub fn expression(self) -> Range<usize> {
        100..150
    }

    pub fn jaw(self) -> Range<usize> {
        match self {
            Self::Width153 => 150..153,
            Self::Width156 => 153..156,
        }
    }

    pub fn project(self, raw: &[f32]) -> Result<FaceFrame> {
        if raw.len() != self.width() {
            return Err(Error::ShapeMismatch { expected: vec![self.width()], actual: vec![raw.len()] });
        }
        let mut v = Vec::with_capacity(FACE_WIDTH);
        v.extend_from_slice(&raw[self.expression()]);
        v.extend_from_slice(&raw[self.jaw()]);
        FaceFrame::from_slice(&v)
    }
}

/// Width of the raw whole-body feature row: root (3), 21 body joints (63),
/// left hand (45), right hand (45), jaw (3), shape (10), expression (10).
pub const RAW_BODY_WIDTH: usize = 179;
/// Upper-body joints 13..=21 (collars, head, shoulders, elbows, wrists).
pub const RAW_BODY_UPPER: Range<usize> = 39..66;
pub const RAW_BODY_LEFT_HAND: Range<usize> = 66..111;
pub const RAW_BODY_RIGHT_HAND: Range<usize> = 111..156;

pub fn project_body(raw: &[f32]) -> Result<BodyFrame> {
    if raw.len() != RAW_BODY_WIDTH {
        return Err(Error::ShapeMismatch { expected: vec![RAW_BODY_WIDTH], actual: vec![raw.len()] });
    }
    let mut v = Vec::with_capacity(BODY_WIDTH);
    v.extend_from_slice(&raw[RAW_BODY_UPPER]);
    v.extend_from_slice(&raw[RAW_BODY_RIGHT_HAND]);
    v.extend_from_slice(&raw[RAW_BODY_LEFT_HAND]);
    BodyFrame::from_slice(&v)
}
