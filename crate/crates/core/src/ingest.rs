//! Deterministic preprocessing steps: utterance frame spans, active-speaker
//! crop selection, resize-and-pad geometry and the harmful-content rule.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_traits::Float;

use crate::error::{Error, Result};

/// Videos whose harmful utterances last longer than this are dropped.
pub const HARMFUL_LIMIT_SECONDS: f64 = 180.0;

/// Products within this relative distance of an integer are snapped to it
/// before flooring, so decimal timestamps such as `0.7 s × 30` land on 21.
const FLOOR_SNAP: f64 = 1e-9;

/// First and last frame of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UtteranceFrameSpan {
    pub start: usize,
    pub end: usize,
}

impl UtteranceFrameSpan {
    /// Frames `start..end`, the slice `F[s:e]`.
    pub fn frames(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

fn floor_frames(t: f64, fps: f64) -> usize {
    let x = t * fps;
    let r = x.round();
    let snapped = if (x - r).abs() <= FLOOR_SNAP * r.abs().max(1.0) { r } else { x };
    snapped.floor() as usize
}

/// `(s, e) = ⌊(t_start, t_end) × fps⌋`, both clamped to the last frame when
/// the video length is known.
pub fn utterance_frames(t_start: f64, t_end: f64, fps: f64, total_frames: Option<usize>) -> Result<UtteranceFrameSpan> {
    if !(t_start.is_finite() && t_end.is_finite()) || t_start < 0.0 {
        return Err(Error::invalid(format!("utterance times {t_start}..{t_end} must be finite and non-negative")));
    }
    if t_end < t_start {
        return Err(Error::invalid(format!("utterance ends at {t_end} before it starts at {t_start}")));
    }
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::invalid(format!("fps {fps} must be positive")));
    }
    let mut start = floor_frames(t_start, fps);
    let mut end = floor_frames(t_end, fps);
    if let Some(n) = total_frames {
        if n == 0 {
            return Err(Error::invalid("video has no frames"));
        }
        start = start.min(n - 1);
        end = end.min(n - 1);
    }
    Ok(UtteranceFrameSpan { start, end })
}

/// Why a frame got no crop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignDiagnostic {
    pub frame: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    /// Index of the chosen candidate in each frame; `None` for skipped frames.
    pub chosen: Vec<Option<usize>>,
    pub diagnostics: Vec<AlignDiagnostic>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Picks the speaker crop in each frame. With several candidates and a
/// previous choice, the candidate whose embedding has the highest cosine
/// similarity to the previous crop's wins (first on ties); otherwise the
/// first candidate. A frame whose embeddings cannot be computed is skipped
/// and leaves the previous crop in place.
pub fn align_speaker<C, E>(frames: &[Vec<C>], mut embed: E) -> Alignment
where
    E: FnMut(&C) -> core::result::Result<Vec<f64>, String>,
{
    let mut out = Alignment { chosen: Vec::with_capacity(frames.len()), diagnostics: Vec::new() };
    let mut prev: Option<Vec<f64>> = None;
    for (f, cands) in frames.iter().enumerate() {
        if cands.is_empty() {
            out.chosen.push(None);
            out.diagnostics.push(AlignDiagnostic { frame: f, message: "no candidate crops".into() });
            continue;
        }
        let pick = match &prev {
            Some(p) if cands.len() >= 2 => best_match(cands, p, &mut embed),
            _ => embed(&cands[0]).map(|e| (0, e)).map_err(|m| format!("candidate 0: {m}")),
        };
        match pick {
            Ok((i, e)) => {
                out.chosen.push(Some(i));
                prev = Some(e);
            }
            Err(message) => {
                out.chosen.push(None);
                out.diagnostics.push(AlignDiagnostic { frame: f, message });
            }
        }
    }
    out
}

fn best_match<C, E>(cands: &[C], prev: &[f64], embed: &mut E) -> core::result::Result<(usize, Vec<f64>), String>
where
    E: FnMut(&C) -> core::result::Result<Vec<f64>, String>,
{
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for (i, c) in cands.iter().enumerate() {
        let e = embed(c).map_err(|m| format!("candidate {i}: {m}"))?;
        if e.len() != prev.len() {
            return Err(format!("candidate {i}: embedding width {} != {}", e.len(), prev.len()));
        }
        let s = cosine(&e, prev);
        if best.as_ref().is_none_or(|b| s > b.1) {
            best = Some((i, s, e));
        }
    }
    let (i, _, e) = best.expect("at least two candidates");
    Ok((i, e))
}

/// Geometry of scaling an image so its longer side is `side`, then centring
/// it on a `side × side` zero canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizePad {
    pub side: usize,
    /// `S / max(w, h)`.
    pub scale: f64,
    pub width: usize,
    pub height: usize,
    pub offset_w: usize,
    pub offset_h: usize,
}

/// `s = S / max(w, h)`, `w' = round(s·w)`, `h' = round(s·h)`,
/// `δ = ⌊(S − ·')/2⌋`. Halves round away from zero.
pub fn resize_pad(w: usize, h: usize, side: usize) -> Result<ResizePad> {
    if w == 0 || h == 0 || side == 0 {
        return Err(Error::invalid(format!("image {w}x{h} and side {side} must be positive")));
    }
    let m = w.max(h) as f64;
    let s = side as f64;
    // s·w computed as S·w/m keeps a single rounding of an exact rational
    let width = Float::round(s * w as f64 / m) as usize;
    let height = Float::round(s * h as f64 / m) as usize;
    Ok(ResizePad { side, scale: s / m, width, height, offset_w: (side - width) / 2, offset_h: (side - height) / 2 })
}

impl ResizePad {
    /// Places a row-major `height × width` image on the zero canvas.
    pub fn place<T: Copy + Default>(&self, resized: &[T]) -> Result<Vec<T>> {
        if resized.len() != self.width * self.height {
            return Err(Error::ShapeMismatch { expected: vec![self.height, self.width], actual: vec![resized.len()] });
        }
        let mut canvas = vec![T::default(); self.side * self.side];
        for i in 0..self.height {
            let dst = (i + self.offset_h) * self.side + self.offset_w;
            canvas[dst..dst + self.width].copy_from_slice(&resized[i * self.width..(i + 1) * self.width]);
        }
        Ok(canvas)
    }

    /// Canvas pixel `(i, j)` as a source pixel of the resized image, if any.
    pub fn source_of(&self, i: usize, j: usize) -> Option<(usize, usize)> {
        let inside = (self.offset_h..self.offset_h + self.height).contains(&i)
            && (self.offset_w..self.offset_w + self.width).contains(&j);
        inside.then(|| (i - self.offset_h, j - self.offset_w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceHarm {
    pub id: String,
    pub duration: f64,
    pub harmful: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmFilter {
    /// Non-harmful utterance ids, in input order; empty when the video is dropped.
    pub kept: Vec<String>,
    pub harmful_seconds: f64,
    pub discard_video: bool,
}

/// Drops harmful utterances, and the whole video when they add up to more
/// than three minutes.
pub fn harmful_filter(utterances: &[UtteranceHarm]) -> Result<HarmFilter> {
    // compensated sum so decimal durations that add to exactly 180 stay at 180
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for u in utterances {
        if !(u.duration.is_finite() && u.duration >= 0.0) {
            return Err(Error::invalid(format!("utterance {} has duration {}", u.id, u.duration)));
        }
        if u.harmful {
            let t = sum + u.duration;
            comp += if sum.abs() >= u.duration { (sum - t) + u.duration } else { (u.duration - t) + sum };
            sum = t;
        }
    }
    let harmful_seconds = sum + comp;
    let discard_video = harmful_seconds > HARMFUL_LIMIT_SECONDS;
    let kept = if discard_video {
        Vec::new()
    } else {
        utterances.iter().filter(|u| !u.harmful).map(|u| u.id.clone()).collect()
    };
    Ok(HarmFilter { kept, harmful_seconds, discard_video })
}
