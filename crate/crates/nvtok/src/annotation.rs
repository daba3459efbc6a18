//! Per-segment annotation records: conversation with word timings, raw
//! face/body feature tracks, speaker boxes and harmful-utterance ids.

use std::collections::HashSet;
use std::path::Path;

use nvtok_core::motion::{project_body, MotionSequence, RawFaceLayout, StreamKind, RAW_BODY_WIDTH};
use nvtok_core::savgol;
use nvtok_core::sequence::TimedWord;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top-level keys, all required.
pub const TOP_LEVEL_KEYS: [&str; 10] = [
    "channel_id",
    "video_id",
    "duration",
    "fps",
    "segment_id",
    "conversation",
    "facial_expression",
    "body_language",
    "speaker_bbox",
    "harmful_utterance_id",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub channel_id: String,
    pub video_id: String,
    /// Seconds.
    pub duration: f64,
    pub fps: f64,
    pub segment_id: String,
    pub conversation: Vec<Utterance>,
    pub facial_expression: Vec<FeatureTrack>,
    pub body_language: Vec<FeatureTrack>,
    pub speaker_bbox: Vec<SpeakerBox>,
    pub harmful_utterance_id: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub text: String,
    pub t_start: f64,
    pub t_end: f64,
    pub words: Vec<Word>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub word: String,
    pub t_start: f64,
    pub t_end: f64,
}

/// Raw feature rows of one utterance, one per listed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub utterance_id: String,
    pub frame_ids: Vec<usize>,
    pub features: Vec<Vec<f32>>,
}

/// `[x_top, y_top, x_bottom, y_bottom]` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerBox {
    pub frame_id: usize,
    pub bbox: [f64; 4],
}

fn invalid(msg: String) -> Error {
    Error::Core(nvtok_core::Error::Validation(msg))
}

/// Parses and validates an annotation. A missing top-level key is reported
/// by name; broken invariants are validation errors.
pub fn parse_annotation(bytes: &[u8]) -> Result<Annotation> {
    let value: serde_json::Value = serde_json::from_slice(bytes)?;
    let obj = value.as_object().ok_or_else(|| Error::Schema("annotation must be a JSON object".into()))?;
    if let Some(key) = TOP_LEVEL_KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return Err(Error::Schema(format!("missing key `{key}`")));
    }
    let ann: Annotation = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    ann.validate()?;
    Ok(ann)
}

pub fn read_annotation(path: &Path) -> Result<Annotation> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_annotation(&bytes).map_err(|e| e.in_file(path))
}

impl Annotation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(invalid(format!("duration {} must be non-negative", self.duration)));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid(format!("fps {} must be positive", self.fps)));
        }
        let mut ids = HashSet::new();
        for u in &self.conversation {
            if !ids.insert(u.id.as_str()) {
                return Err(invalid(format!("utterance id {} repeated", u.id)));
            }
            if !(u.t_start.is_finite() && u.t_end.is_finite() && 0.0 <= u.t_start && u.t_start <= u.t_end) {
                return Err(invalid(format!("utterance {} spans {}..{}", u.id, u.t_start, u.t_end)));
            }
            for w in &u.words {
                if !(u.t_start <= w.t_start && w.t_start <= w.t_end && w.t_end <= u.t_end) {
                    return Err(invalid(format!(
                        "word {:?} at {}..{} outside utterance {} ({}..{})",
                        w.word, w.t_start, w.t_end, u.id, u.t_start, u.t_end
                    )));
                }
            }
        }
        let harmful: HashSet<&str> = self.harmful_utterance_id.iter().map(String::as_str).collect();
        if let Some(id) = harmful.iter().find(|h| ids.contains(**h)) {
            return Err(invalid(format!("harmful utterance {id} also appears in the conversation")));
        }
        self.face_layout()?;
        for (name, tracks, widths) in [
            ("facial_expression", &self.facial_expression, &[153usize, 156][..]),
            ("body_language", &self.body_language, &[RAW_BODY_WIDTH][..]),
        ] {
            for t in tracks {
                if !ids.contains(t.utterance_id.as_str()) && !harmful.contains(t.utterance_id.as_str()) {
                    return Err(invalid(format!("{name} refers to unknown utterance {}", t.utterance_id)));
                }
                if t.frame_ids.len() != t.features.len() {
                    return Err(invalid(format!(
                        "{name} of {}: {} frame ids for {} feature rows",
                        t.utterance_id,
                        t.frame_ids.len(),
                        t.features.len()
                    )));
                }
                if let Some(row) = t.features.iter().find(|r| !widths.contains(&r.len())) {
                    return Err(invalid(format!(
                        "{name} of {} has width {}, expected {widths:?}",
                        t.utterance_id,
                        row.len()
                    )));
                }
                if t.features.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invalid(format!("{name} of {} has non-finite values", t.utterance_id)));
                }
            }
        }
        for b in &self.speaker_bbox {
            let [x0, y0, x1, y1] = b.bbox;
            if !(x0 < x1 && y0 < y1) {
                return Err(invalid(format!("speaker box at frame {} is not ordered: {:?}", b.frame_id, b.bbox)));
            }
        }
        Ok(())
    }

    /// Raw face layout shared by every row; `None` without face features.
    pub fn face_layout(&self) -> Result<Option<RawFaceLayout>> {
        let mut widths = self.facial_expression.iter().flat_map(|t| t.features.iter().map(Vec::len));
        let Some(first) = widths.next() else {
            return Ok(None);
        };
        if widths.any(|w| w != first) {
            return Err(invalid("facial_expression rows mix raw widths".into()));
        }
        RawFaceLayout::from_width(first)
            .map(Some)
            .ok_or_else(|| invalid(format!("facial_expression width {first}, expected 153 or 156")))
    }

    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.conversation.iter().find(|u| u.id == id)
    }

    fn track(&self, id: &str, stream: StreamKind) -> Option<&FeatureTrack> {
        let tracks = match stream {
            StreamKind::Face => &self.facial_expression,
            StreamKind::Body => &self.body_language,
        };
        tracks.iter().find(|t| t.utterance_id == id)
    }

    /// Projected (53-d or 117-d) motion of one utterance, optionally smoothed
    /// with the default Savitzky–Golay filter. `None` when the utterance has
    /// no track for the stream.
    pub fn utterance_motion(&self, id: &str, stream: StreamKind, smooth: bool) -> Result<Option<MotionSequence>> {
        let Some(track) = self.track(id, stream) else {
            return Ok(None);
        };
        let fps = self.fps as f32;
        let seq = match stream {
            StreamKind::Face => {
                let layout = self.face_layout()?.expect("track exists");
                let frames =
                    track.features.iter().map(|r| layout.project(r)).collect::<nvtok_core::Result<Vec<_>>>()?;
                MotionSequence::from_face_frames(&frames, fps)?
            }
            StreamKind::Body => {
                let frames = track.features.iter().map(|r| project_body(r)).collect::<nvtok_core::Result<Vec<_>>>()?;
                MotionSequence::from_body_frames(&frames, fps)?
            }
        };
        Ok(Some(if smooth { seq.smooth(savgol::DEFAULT_WINDOW, savgol::DEFAULT_POLYORDER)? } else { seq }))
    }

    /// Time of the first feature frame of an utterance's track, in seconds.
    pub fn clip_start(&self, id: &str, stream: StreamKind) -> Option<f64> {
        self.track(id, stream).and_then(|t| t.frame_ids.first()).map(|&f| f as f64 / self.fps)
    }

    pub fn words(&self, id: &str) -> Option<Vec<TimedWord>> {
        self.utterance(id).map(|u| u.words.iter().map(|w| TimedWord::new(w.word.clone(), w.t_start, w.t_end)).collect())
    }
}
