//! Interleaved word/face/body token streams and their chat-message text form.
//!
//! Text form: words separated by single spaces, each followed by its codes as
//! `<FACE_k>` / `<BODY_k>` tags. A run of tags is written without separators
//! and set off from neighbouring words by one space, e.g.
//! `I have <FACE_12><BODY_239> one.`

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

pub const FACE_TAG: &str = "FACE";
pub const BODY_TAG: &str = "BODY";

/// System message that introduces the nonverbal tags to a chat model.
pub const SYSTEM_PROMPT: &str = "You are a helpful assistant. Text includes nonverbal tokens <FACE_*>, <BODY_*> \
interleaved with language. Help interpret meaning while considering these cues.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenClass {
    Text,
    Face,
    Body,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Word(String),
    Face(u32),
    Body(u32),
}

impl TokenKind {
    pub fn class(&self) -> TokenClass {
        match self {
            Self::Word(_) => TokenClass::Text,
            Self::Face(_) => TokenClass::Face,
            Self::Body(_) => TokenClass::Body,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Start time in seconds; `None` for tokens parsed from text.
    pub time: Option<f64>,
}

impl Token {
    pub fn untimed(kind: TokenKind) -> Self {
        Self { kind, time: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Role {
    System,
    #[default]
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::System => "system",
            Self::User => "user",
            Self::Assistant => "assistant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "system" => Ok(Self::System),
            "user" => Ok(Self::User),
            "assistant" => Ok(Self::Assistant),
            other => Err(Error::Validation(format!("unknown role {other:?}"))),
        }
    }
}

/// One chat turn: `{role, name, content}`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChatMessage {
    pub role: Role,
    /// Speaker or utterance identifier, e.g. `crXEd-NEsS8_000_9`.
    pub name: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterleavedSequence {
    pub role: Role,
    pub name: String,
    pub tokens: Vec<Token>,
}

impl InterleavedSequence {
    pub fn count(&self, class: TokenClass) -> usize {
        self.tokens.iter().filter(|t| t.kind.class() == class).count()
    }

    pub fn classes(&self) -> Vec<TokenClass> {
        self.tokens.iter().map(|t| t.kind.class()).collect()
    }

    /// Same sequence with all timestamps dropped.
    pub fn untimed(&self) -> Self {
        Self {
            role: self.role,
            name: self.name.clone(),
            tokens: self.tokens.iter().map(|t| Token::untimed(t.kind.clone())).collect(),
        }
    }
}

/// Word with its start and end time in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedWord {
    pub word: String,
    pub start: f64,
    pub end: f64,
}

impl TimedWord {
    pub fn new(word: impl Into<String>, start: f64, end: f64) -> Self {
        Self { word: word.into(), start, end }
    }
}

fn check_word(w: &str) -> Result<()> {
    if w.is_empty() || w.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!("word {w:?} is empty or contains whitespace")));
    }
    let (mut chunks, mut codes) = (Vec::new(), Vec::new());
    split_chunk(w, &mut chunks, &mut codes);
    if chunks.len() != 1 || !matches!(chunks[0], Piece::Text(_)) {
        return Err(Error::invalid(format!("word {w:?} contains a code tag")));
    }
    Ok(())
}

/// Places code `t` (covering frames `[t·q, (t+1)·q)` after `clip_start`)
/// after the word whose span contains its midpoint, or else the nearest word
/// that starts before it. Codes that precede every word, or all codes when
/// there are no words, open the sequence. Face and body codes of one window
/// are emitted as a pair, face first, stamped with the window midpoint.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn build_interleaved(
    words: &[TimedWord],
    face: &[usize],
    body: &[usize],
    fps: f32,
    ratio: usize,
    clip_start: f64,
) -> Result<InterleavedSequence> {
    if face.len() != body.len() {
        return Err(Error::invalid(format!("face and body clips have {} and {} steps", face.len(), body.len())));
    }
    if !(fps > 0.0) || ratio == 0 || !clip_start.is_finite() {
        return Err(Error::invalid("fps and ratio must be positive"));
    }
    for w in words {
        check_word(&w.word)?;
        if !(w.start.is_finite() && w.end.is_finite()) || w.end < w.start {
            return Err(Error::invalid(format!("word {:?} has span {}..{}", w.word, w.start, w.end)));
        }
    }
    let code = |k: usize| u32::try_from(k).map_err(|_| Error::invalid(format!("code {k} does not fit in u32")));
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.sort_by(|&a, &b| words[a].start.total_cmp(&words[b].start));

    let step = ratio as f64 / fps as f64;
    let mut owned: Vec<Vec<usize>> = alloc::vec![Vec::new(); words.len()];
    let mut orphans = Vec::new();
    for t in 0..face.len() {
        let mid = clip_start + (t as f64 + 0.5) * step;
        let started = order.iter().rposition(|&i| words[i].start <= mid);
        let containing = order.iter().rposition(|&i| words[i].start <= mid && mid <= words[i].end);
        match containing.or(started) {
            Some(slot) => owned[slot].push(t),
            None => orphans.push(t),
        }
    }

    let mut tokens = Vec::with_capacity(words.len() + 2 * face.len());
    let mid = |t: usize| clip_start + (t as f64 + 0.5) * step;
    for &t in &orphans {
        tokens.push(Token { kind: TokenKind::Face(code(face[t])?), time: Some(mid(t)) });
        tokens.push(Token { kind: TokenKind::Body(code(body[t])?), time: Some(mid(t)) });
    }
    for (slot, &i) in order.iter().enumerate() {
        let w = &words[i];
        tokens.push(Token { kind: TokenKind::Word(w.word.clone()), time: Some(w.start) });
        for &t in &owned[slot] {
            let at = Some(mid(t));
            tokens.push(Token { kind: TokenKind::Face(code(face[t])?), time: at });
            tokens.push(Token { kind: TokenKind::Body(code(body[t])?), time: at });
        }
    }
    Ok(InterleavedSequence { role: Role::User, name: String::new(), tokens })
}

fn tag(kind: &TokenKind) -> Option<(&'static str, u32)> {
    match kind {
        TokenKind::Face(k) => Some((FACE_TAG, *k)),
        TokenKind::Body(k) => Some((BODY_TAG, *k)),
        TokenKind::Word(_) => None,
    }
}

/// Text form of the tokens.
pub fn render_content(tokens: &[Token]) -> String {
    let mut out = String::new();
    let mut prev_code = false;
    for t in tokens {
        match tag(&t.kind) {
            Some((name, k)) => {
                if !prev_code && !out.is_empty() {
                    out.push(' ');
                }
                let _ = write!(out, "<{name}_{k}>");
                prev_code = true;
            }
            None => {
                if !out.is_empty() {
                    out.push(' ');
                }
                if let TokenKind::Word(w) = &t.kind {
                    out.push_str(w);
                }
                prev_code = false;
            }
        }
    }
    out
}

pub fn render_chat(seq: &InterleavedSequence) -> ChatMessage {
    ChatMessage { role: seq.role, name: seq.name.clone(), content: render_content(&seq.tokens) }
}

enum Piece<'a> {
    Text(&'a str),
    Code(TokenKind),
}

/// Splits a whitespace-free chunk into text and recognised tags. Tags whose
/// index does not fit in `u32` are recorded in `overflow`.
fn split_chunk<'a>(chunk: &'a str, out: &mut Vec<Piece<'a>>, overflow: &mut Vec<String>) {
    let bytes = chunk.as_bytes();
    let mut text_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            if let Some((kind, len)) = match_tag(&chunk[i..], overflow) {
                if text_start < i {
                    out.push(Piece::Text(&chunk[text_start..i]));
                }
                if let Some(kind) = kind {
                    out.push(Piece::Code(kind));
                }
                i += len;
                text_start = i;
                continue;
            }
        }
        i += 1;
    }
    if text_start < bytes.len() {
        out.push(Piece::Text(&chunk[text_start..]));
    }
}

/// `<FACE_digits>` or `<BODY_digits>` at the start of `s`: the parsed kind
/// (`None` on overflow) and the tag length.
fn match_tag(s: &str, overflow: &mut Vec<String>) -> Option<(Option<TokenKind>, usize)> {
    let rest = s.strip_prefix('<')?;
    let (name, rest) = rest.split_once('_')?;
    if name != FACE_TAG && name != BODY_TAG {
        return None;
    }
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || rest.as_bytes().get(digits) != Some(&b'>') {
        return None;
    }
    let len = 1 + name.len() + 1 + digits + 1;
    let kind = match rest[..digits].parse::<u32>() {
        Ok(k) if name == FACE_TAG => Some(TokenKind::Face(k)),
        Ok(k) => Some(TokenKind::Body(k)),
        Err(_) => {
            overflow.push(s[..len].to_string());
            None
        }
    };
    Some((kind, len))
}

/// Tokens of a content string. With `codebook_size`, any code `>= K` is a
/// validation error listing every offending tag. Unrecognised angle-bracket
/// tags are kept as words.
pub fn parse_content(text: &str, codebook_size: Option<usize>) -> Result<Vec<Token>> {
    let mut pieces = Vec::new();
    let mut overflow = Vec::new();
    for chunk in text.split_whitespace() {
        split_chunk(chunk, &mut pieces, &mut overflow);
    }
    let mut offending = overflow;
    let mut tokens = Vec::with_capacity(pieces.len());
    for p in pieces {
        let kind = match p {
            Piece::Text(w) => TokenKind::Word(w.to_string()),
            Piece::Code(kind) => {
                if let (Some(k), Some((name, v))) = (codebook_size, tag(&kind)) {
                    if v as usize >= k {
                        offending.push(format!("<{name}_{v}>"));
                    }
                }
                kind
            }
        };
        tokens.push(Token::untimed(kind));
    }
    if !offending.is_empty() {
        return Err(Error::CodeOutOfRange { k: codebook_size.unwrap_or(u32::MAX as usize + 1), offending });
    }
    Ok(tokens)
}

pub fn parse_chat(msg: &ChatMessage, codebook_size: Option<usize>) -> Result<InterleavedSequence> {
    Ok(InterleavedSequence {
        role: msg.role,
        name: msg.name.clone(),
        tokens: parse_content(&msg.content, codebook_size)?,
    })
}

/// One factor of the autoregressive decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanStep {
    pub position: usize,
    pub class: TokenClass,
    /// 1-based index among tokens of the same class.
    pub class_index: usize,
    /// Number of preceding tokens the factor conditions on when the sequence
    /// is read strictly left to right.
    pub prefix: usize,
    /// Same, under the reading where a body code shares the prefix of the
    /// face code it is paired with (it does not see that face code).
    pub shared_prefix: usize,
}

/// Per-position prediction schedule: words, then each window's face code,
/// then its body code.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FactorizationPlan {
    pub steps: Vec<PlanStep>,
}

impl FactorizationPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn classes(&self) -> Vec<TokenClass> {
        self.steps.iter().map(|s| s.class).collect()
    }
}

pub fn factorization_order(seq: &InterleavedSequence) -> FactorizationPlan {
    let mut counts = [0usize; 3];
    let mut last_face: Option<usize> = None;
    let steps = seq
        .tokens
        .iter()
        .enumerate()
        .map(|(position, t)| {
            let class = t.kind.class();
            let slot = match class {
                TokenClass::Text => 0,
                TokenClass::Face => 1,
                TokenClass::Body => 2,
            };
            counts[slot] += 1;
            let shared_prefix = match class {
                TokenClass::Body if last_face == Some(position.wrapping_sub(1)) => position - 1,
                _ => position,
            };
            if class == TokenClass::Face {
                last_face = Some(position);
            }
            PlanStep { position, class, class_index: counts[slot], prefix: position, shared_prefix }
        })
        .collect();
    FactorizationPlan { steps }
}
