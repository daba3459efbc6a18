//! Binary file formats: motion sequences (`MSEQ1`), codec checkpoints
//! (`VQCKPT1`) and linear vertex maps (`VMAP1`). All integers and floats are
//! little-endian. See `docs/formats.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nvtok_core::autodiff::Activation;
use nvtok_core::codec::{Codec, CodecConfig, CodecParams};
use nvtok_core::metrics::VertexMap;
use nvtok_core::motion::{MotionSequence, StreamKind};
use nvtok_core::quantizer::Codebook;
use nvtok_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MSEQ_MAGIC: &[u8; 5] = b"MSEQ1";
pub const CKPT_MAGIC: &[u8; 8] = b"VQCKPT1\0";
pub const VMAP_MAGIC: &[u8; 5] = b"VMAP1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(format!("truncated {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8]) -> Result<()> {
        let got = self.take(magic.len(), "magic")?;
        if got != magic {
            return Err(Error::format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format("size overflow"))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u64s(&mut self, n: usize, what: &str) -> Result<Vec<u64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format("size overflow"))?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_f32s(out: &mut Vec<u8>, v: impl IntoIterator<Item = f32>) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

// ---- MSEQ1 ----

pub fn encode_mseq(seq: &MotionSequence) -> Vec<u8> {
    let (d, t) = (seq.width(), seq.len());
    let mut out = Vec::with_capacity(17 + 4 * d * t + t);
    out.extend_from_slice(MSEQ_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&seq.fps().to_le_bytes());
    for i in 0..t {
        put_f32s(&mut out, seq.frame(i));
    }
    out.extend(seq.mask().iter().map(|&m| m as u8));
    out
}

pub fn decode_mseq(bytes: &[u8]) -> Result<MotionSequence> {
    let mut r = Reader::new(bytes);
    r.magic(MSEQ_MAGIC)?;
    let d = r.u32("width")? as usize;
    let t = r.u32("length")? as usize;
    let fps = f32::from_bits(r.u32("fps")?);
    let rows = r.f32s(d.checked_mul(t).ok_or_else(|| Error::format("size overflow"))?, "frames")?;
    let mask = r
        .take(t, "mask")?
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(format!("mask byte {other} at frame {i}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let mut data = vec![0.0f32; d * t];
    for i in 0..t {
        for c in 0..d {
            data[c * t + i] = rows[i * d + c];
        }
    }
    Ok(MotionSequence::from_channel_major(d, fps, data, mask)?)
}

pub fn read_mseq(path: &Path) -> Result<MotionSequence> {
    decode_mseq(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn write_mseq(path: &Path, seq: &MotionSequence) -> Result<()> {
    fs::write(path, encode_mseq(seq)).map_err(|e| Error::io(path, e))
}

/// `*.mseq` files of a directory, sorted by name.
pub fn list_mseq(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut v = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "mseq") {
            v.push(p);
        }
    }
    v.sort();
    Ok(v)
}

// ---- VQCKPT1 ----

/// Serializable mirror of [`CodecConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecConfigRecord {
    pub width: usize,
    pub window: usize,
    pub ratio: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub res_blocks: usize,
    pub activation: ActivationName,
    pub normalize_latent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Relu,
    Silu,
    Identity,
}

impl From<Activation> for ActivationName {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Relu => Self::Relu,
            Activation::Silu => Self::Silu,
            Activation::Identity => Self::Identity,
        }
    }
}

impl From<ActivationName> for Activation {
    fn from(a: ActivationName) -> Self {
        match a {
            ActivationName::Relu => Self::Relu,
            ActivationName::Silu => Self::Silu,
            ActivationName::Identity => Self::Identity,
        }
    }
}

impl From<CodecConfig> for CodecConfigRecord {
    fn from(c: CodecConfig) -> Self {
        Self {
            width: c.width,
            window: c.window,
            ratio: c.ratio,
            codebook_size: c.codebook_size,
            code_dim: c.code_dim,
            hidden: c.hidden,
            kernel: c.kernel,
            res_blocks: c.res_blocks,
            activation: c.activation.into(),
            normalize_latent: c.normalize_latent,
        }
    }
}

impl From<CodecConfigRecord> for CodecConfig {
    fn from(c: CodecConfigRecord) -> Self {
        Self {
            width: c.width,
            window: c.window,
            ratio: c.ratio,
            codebook_size: c.codebook_size,
            code_dim: c.code_dim,
            hidden: c.hidden,
            kernel: c.kernel,
            res_blocks: c.res_blocks,
            activation: c.activation.into(),
            normalize_latent: c.normalize_latent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamName {
    Face,
    Body,
}

impl From<StreamKind> for StreamName {
    fn from(k: StreamKind) -> Self {
        match k {
            StreamKind::Face => Self::Face,
            StreamKind::Body => Self::Body,
        }
    }
}

impl From<StreamName> for StreamKind {
    fn from(k: StreamName) -> Self {
        match k {
            StreamName::Face => Self::Face,
            StreamName::Body => Self::Body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CkptHeader {
    stream: Option<StreamName>,
    config: CodecConfigRecord,
    params: Vec<ParamRecord>,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

/// A codec plus the stream it was trained for and free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub codec: Codec<f32>,
    pub stream: Option<StreamKind>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(codec: Codec<f32>, stream: Option<StreamKind>) -> Self {
        Self { codec, stream, meta: serde_json::Map::new() }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let codec = &ckpt.codec;
    let header = CkptHeader {
        stream: ckpt.stream.map(Into::into),
        config: codec.config.into(),
        params: codec.config.param_specs().into_iter().map(|s| ParamRecord { name: s.name, shape: s.shape }).collect(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &codec.params.tensors {
        put_f32s(&mut out, t.data().iter().copied());
    }
    let cb = &codec.codebook;
    put_f32s(&mut out, cb.entries().iter().copied());
    put_f32s(&mut out, cb.ema_counts().iter().copied());
    put_f32s(&mut out, cb.ema_sums().iter().copied());
    for u in cb.usage() {
        out.extend_from_slice(&u.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CKPT_MAGIC)?;
    let n = r.u32("header length")? as usize;
    let header: CkptHeader = serde_json::from_slice(r.take(n, "header")?)?;
    let config: CodecConfig = header.config.into();
    config.validate()?;
    let specs = config.param_specs();
    let stored: Vec<(String, Vec<usize>)> = header.params.into_iter().map(|p| (p.name, p.shape)).collect();
    let expected: Vec<(String, Vec<usize>)> = specs.iter().map(|s| (s.name.clone(), s.shape.clone())).collect();
    if stored != expected {
        return Err(Error::format("parameter layout does not match the stored configuration"));
    }
    let mut tensors = Vec::with_capacity(specs.len());
    for s in &specs {
        let len = s.shape.iter().product();
        tensors.push(Tensor::from_vec(&s.shape, r.f32s(len, &s.name)?)?);
    }
    let (k, c) = (config.codebook_size, config.code_dim);
    let entries = r.f32s(k * c, "codebook")?;
    let counts = r.f32s(k, "EMA counts")?;
    let sums = r.f32s(k * c, "EMA sums")?;
    let usage = r.u64s(k, "usage")?;
    r.finish()?;
    let codebook = Codebook::from_parts(k, c, entries, counts, sums, usage)?;
    let codec = Codec::from_parts(config, CodecParams { tensors }, codebook)?;
    Ok(Checkpoint { codec, stream: header.stream.map(Into::into), meta: header.meta })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?).map_err(|e| e.in_file(path))
}

/// Atomic: readers never observe a partially written checkpoint.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

// ---- VMAP1 ----

/// `V(m) = basis · m + offset` with `basis` row-major `out × d`.
pub fn encode_vmap(d: usize, out: usize, basis: &[f32], offset: &[f32]) -> Result<Vec<u8>> {
    if basis.len() != d * out || offset.len() != out {
        return Err(Error::format("vertex map sizes disagree"));
    }
    let mut v = Vec::new();
    v.extend_from_slice(VMAP_MAGIC);
    v.extend_from_slice(&(d as u32).to_le_bytes());
    v.extend_from_slice(&(out as u32).to_le_bytes());
    put_f32s(&mut v, basis.iter().copied());
    put_f32s(&mut v, offset.iter().copied());
    Ok(v)
}

pub fn decode_vmap(bytes: &[u8]) -> Result<VertexMap> {
    let mut r = Reader::new(bytes);
    r.magic(VMAP_MAGIC)?;
    let d = r.u32("input width")? as usize;
    let out = r.u32("output width")? as usize;
    let basis = r.f32s(d * out, "basis")?;
    let offset = r.f32s(out, "offset")?;
    r.finish()?;
    let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect();
    Ok(VertexMap::linear(d, out, widen(basis), widen(offset))?)
}

pub fn read_vmap(path: &Path) -> Result<VertexMap> {
    decode_vmap(&read_file(path)?).map_err(|e| e.in_file(path))
}

// ---- code index files ----

/// One decimal index per line.
pub fn render_codes(indices: &[usize]) -> String {
    let mut s = String::with_capacity(indices.len() * 4);
    for i in indices {
        s.push_str(&i.to_string());
        s.push('\n');
    }
    s
}

pub fn parse_codes(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim().parse().map_err(|_| Error::format(format!("line {}: {:?} is not a code index", n + 1, l.trim())))
        })
        .collect()
}

pub fn read_codes(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_codes(&text).map_err(|e| e.in_file(path))
}
