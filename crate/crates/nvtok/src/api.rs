//! Call surface for language bindings and the CLI. Both go through these
//! functions, so their outputs agree byte for byte.

use std::path::Path;

use nvtok_core::codec::CodecConfig;
use nvtok_core::metrics::{MetricOptions, MetricReport};
use nvtok_core::motion::{MotionSequence, StreamKind};
use nvtok_core::sequence::{build_interleaved, render_chat, ChatMessage, Role, TimedWord};
use serde::Serialize;

use crate::chat::{system_message, write_jsonl};
use crate::error::{Error, Result};
use crate::formats::{read_checkpoint, Checkpoint};

/// A loaded checkpoint. Every call on a closed handle fails with
/// [`Error::Closed`].
#[derive(Debug, Clone)]
pub struct Handle {
    inner: Option<Checkpoint>,
}

impl Handle {
    pub fn new(ckpt: Checkpoint) -> Self {
        Self { inner: Some(ckpt) }
    }

    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self::new(read_checkpoint(path)?))
    }

    pub fn close(&mut self) {
        self.inner = None;
    }

    pub fn is_closed(&self) -> bool {
        self.inner.is_none()
    }

    pub fn checkpoint(&self) -> Result<&Checkpoint> {
        self.inner.as_ref().ok_or(Error::Closed)
    }

    pub fn config(&self) -> Result<CodecConfig> {
        Ok(self.checkpoint()?.codec.config)
    }

    pub fn stream(&self) -> Result<Option<StreamKind>> {
        Ok(self.checkpoint()?.stream)
    }

    /// Codes of a row-major `frames × width` array with `frames ≤ W`; shorter
    /// inputs are zero-padded.
    pub fn encode(&self, array: &[f32], shape: [usize; 2]) -> Result<Vec<usize>> {
        let cfg = self.config()?;
        let [frames, width] = shape;
        if width != cfg.width || frames == 0 || frames > cfg.window || array.len() != frames * width {
            return Err(nvtok_core::Error::ShapeMismatch {
                expected: vec![cfg.window, cfg.width],
                actual: if array.len() == frames * width { vec![frames, width] } else { vec![array.len()] },
            }
            .into());
        }
        let rows: Vec<Vec<f32>> = array.chunks_exact(width).map(<[f32]>::to_vec).collect();
        let seq = MotionSequence::from_frames(width, nvtok_core::motion::DEFAULT_FPS, &rows)?;
        self.encode_sequence(&seq, false)
    }

    /// Codes of a sequence. Without `split` only the first window is used;
    /// with it every `W`-frame window is encoded and the codes concatenated.
    pub fn encode_sequence(&self, seq: &MotionSequence, split: bool) -> Result<Vec<usize>> {
        let codec = &self.checkpoint()?.codec;
        if seq.width() != codec.config.width {
            return Err(nvtok_core::Error::ShapeMismatch {
                expected: vec![codec.config.width],
                actual: vec![seq.width()],
            }
            .into());
        }
        let windows = if split { seq.split_windows(codec.config.window_spec())? } else { vec![seq.clone()] };
        let mut out = Vec::new();
        for w in &windows {
            out.extend(codec.tokenize(w)?.indices);
        }
        Ok(out)
    }

    /// Row-major `frames × width` reconstruction; `frames = W` per window of codes.
    pub fn decode(&self, indices: &[usize]) -> Result<(Vec<f32>, [usize; 2])> {
        let seq = self.decode_sequence(indices, nvtok_core::motion::DEFAULT_FPS)?;
        let rows: Vec<f32> = (0..seq.len()).flat_map(|t| seq.frame(t)).collect();
        Ok((rows, [seq.len(), seq.width()]))
    }

    /// Inverse of [`Handle::encode_sequence`]: any whole number of windows.
    pub fn decode_sequence(&self, indices: &[usize], fps: f32) -> Result<MotionSequence> {
        let codec = &self.checkpoint()?.codec;
        let steps = codec.config.steps();
        if indices.is_empty() || !indices.len().is_multiple_of(steps) {
            return Err(Error::Core(nvtok_core::Error::InvalidArgument(format!(
                "{} codes is not a positive multiple of {steps} per window",
                indices.len()
            ))));
        }
        let parts = indices.chunks(steps).map(|c| codec.detokenize(c, fps)).collect::<nvtok_core::Result<Vec<_>>>()?;
        concat(&parts)
    }
}

fn concat(parts: &[MotionSequence]) -> Result<MotionSequence> {
    let width = parts[0].width();
    let len: usize = parts.iter().map(MotionSequence::len).sum();
    let mut data = Vec::with_capacity(width * len);
    for c in 0..width {
        for p in parts {
            data.extend_from_slice(p.channel(c));
        }
    }
    let mask = parts.iter().flat_map(|p| p.mask().iter().copied()).collect();
    Ok(MotionSequence::from_channel_major(width, parts[0].fps(), data, mask)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizeOptions {
    pub fps: f32,
    pub ratio: usize,
    /// Time of the first motion frame, in the same clock as the word times.
    pub clip_start: f64,
    pub role: Role,
    pub name: String,
    /// Emit the system prompt as the first line.
    pub system: bool,
}

impl Default for TokenizeOptions {
    fn default() -> Self {
        Self {
            fps: nvtok_core::motion::DEFAULT_FPS,
            ratio: 8,
            clip_start: 0.0,
            role: Role::User,
            name: String::new(),
            system: false,
        }
    }
}

/// Interleaves words with face/body codes and renders chat JSON lines.
pub fn tokenize(words: &[TimedWord], face: &[usize], body: &[usize], opts: &TokenizeOptions) -> Result<String> {
    let mut seq = build_interleaved(words, face, body, opts.fps, opts.ratio, opts.clip_start)?;
    seq.role = opts.role;
    seq.name = opts.name.clone();
    let mut msgs: Vec<ChatMessage> = Vec::new();
    if opts.system {
        msgs.push(system_message());
    }
    msgs.push(render_chat(&seq));
    Ok(write_jsonl(&msgs))
}

/// Metric values as written by `nvtok eval`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricJson {
    pub vmse: f64,
    pub lvd: f64,
    pub wvl2: f64,
    pub diversity: f64,
    pub variance: f64,
}

impl From<MetricReport> for MetricJson {
    fn from(r: MetricReport) -> Self {
        Self { vmse: r.vmse, lvd: r.lvd, wvl2: r.wvl2, diversity: r.diversity, variance: r.variance }
    }
}

pub fn metrics(gt: &[MotionSequence], pred: &[MotionSequence], opts: &MetricOptions) -> Result<MetricReport> {
    Ok(MetricReport::evaluate(gt, pred, opts)?)
}
