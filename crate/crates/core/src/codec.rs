//! Convolutional encoder/decoder pair around the quantizer.
//!
//! Encoder: `conv(k3) → act → [strided conv(k4, s2) → residual block] × log2(q) → conv(k3)`.
//! Decoder mirrors it with transposed strided convolutions:
//! `conv(k3) → act → [residual block → transposed conv(k4, s2)] × log2(q) → conv(k3) → act → conv(k3)`.
//! A residual block is `x + conv_k1(act(conv_k3(act(x))))`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Activation, NodeId, Tape};
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, StreamKind, WindowSpec, BODY_WIDTH, FACE_WIDTH, REFERENCE_WINDOW};
use crate::quantizer::{downsample_mask, embed, quantize, Codebook, QuantizedClip};
use crate::real::Real;
use crate::tensor::Tensor;

#[cfg(not(feature = "std"))]
use num_traits::Float;

const DOWN_KERNEL: usize = 4;

/// Keeps latent normalization smooth at the origin.
pub const LATENT_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    /// Frame width `d`.
    pub width: usize,
    /// Window length `W` in frames.
    pub window: usize,
    /// Temporal downsample ratio `q`.
    pub ratio: usize,
    /// Codebook size `K`.
    pub codebook_size: usize,
    /// Code dimension `C`.
    pub code_dim: usize,
    /// Channel width of every hidden convolution.
    pub hidden: usize,
    /// Kernel of the non-strided convolutions; odd.
    pub kernel: usize,
    /// Residual blocks per resolution stage.
    pub res_blocks: usize,
    pub activation: Activation,
    /// Scale each latent step to unit length before quantization, matching
    /// the unit-norm codebook rows.
    pub normalize_latent: bool,
}

impl CodecConfig {
    pub fn face() -> Self {
        Self {
            width: FACE_WIDTH,
            window: REFERENCE_WINDOW,
            ratio: 8,
            codebook_size: 512,
            code_dim: 8,
            hidden: 128,
            kernel: 3,
            res_blocks: 1,
            activation: Activation::default(),
            normalize_latent: true,
        }
    }

    pub fn body() -> Self {
        Self { width: BODY_WIDTH, code_dim: 16, ..Self::face() }
    }

    pub fn for_stream(kind: StreamKind) -> Self {
        match kind {
            StreamKind::Face => Self::face(),
            StreamKind::Body => Self::body(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ratio.is_power_of_two() || self.ratio < 2 {
            return Err(Error::invalid(format!("downsample ratio {} is not a power of two >= 2", self.ratio)));
        }
        if self.window == 0 || !self.window.is_multiple_of(self.ratio) {
            return Err(Error::invalid(format!(
                "window {} is not a positive multiple of ratio {}",
                self.window, self.ratio
            )));
        }
        if self.codebook_size < 2 {
            return Err(Error::invalid("codebook size must be at least 2"));
        }
        if self.code_dim == 0 || self.width == 0 || self.hidden == 0 {
            return Err(Error::invalid("widths and code dimension must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid("convolution kernel must be odd"));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.ratio.trailing_zeros() as usize
    }

    /// Latent steps per window, `τ = W / q`.
    pub fn steps(&self) -> usize {
        self.window / self.ratio
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec { window: self.window, width: self.width }
    }

    /// Names and shapes of every trainable tensor, encoder first, in the
    /// order they are stored and serialized.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (d, h, c, k) = (self.width, self.hidden, self.code_dim, self.kernel);
        let mut specs = Vec::new();
        let mut conv = |name: String, shape: [usize; 3], fan_in: usize| {
            specs.push(ParamSpec { name: format!("{name}.weight"), shape: shape.to_vec(), fan_in });
            let out = if name.contains(".up") { shape[1] } else { shape[0] };
            specs.push(ParamSpec { name: format!("{name}.bias"), shape: vec![out], fan_in });
        };
        conv("encoder.in".into(), [h, d, k], d * k);
        for s in 0..self.stages() {
            conv(format!("encoder.down{s}"), [h, h, DOWN_KERNEL], h * DOWN_KERNEL);
            for r in 0..self.res_blocks {
                conv(format!("encoder.res{s}.{r}.conv1"), [h, h, k], h * k);
                conv(format!("encoder.res{s}.{r}.conv2"), [h, h, 1], h);
            }
        }
        conv("encoder.out".into(), [c, h, k], h * k);
        conv("decoder.in".into(), [h, c, k], c * k);
        for s in 0..self.stages() {
            for r in 0..self.res_blocks {
                conv(format!("decoder.res{s}.{r}.conv1"), [h, h, k], h * k);
                conv(format!("decoder.res{s}.{r}.conv2"), [h, h, 1], h);
            }
            conv(format!("decoder.up{s}"), [h, h, DOWN_KERNEL], h * DOWN_KERNEL);
        }
        conv("decoder.mid".into(), [h, h, k], h * k);
        conv("decoder.out".into(), [d, h, k], h * k);
        specs
    }

    pub fn encoder_param_count(&self) -> usize {
        2 * (2 + self.stages() * (1 + 2 * self.res_blocks))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

/// Trainable tensors in [`CodecConfig::param_specs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> CodecParams<T> {
    /// Uniform `±1/√fan_in` initialization.
    pub fn init(cfg: &CodecConfig, rng: &mut impl Rng) -> Self {
        let tensors = cfg
            .param_specs()
            .iter()
            .map(|s| {
                let bound = 1.0 / (s.fan_in as f64).sqrt();
                let n: usize = s.shape.iter().product();
                let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
                Tensor::from_vec(&s.shape, data).expect("spec shape")
            })
            .collect();
        Self { tensors }
    }

    pub fn zeros(cfg: &CodecConfig) -> Self {
        Self { tensors: cfg.param_specs().iter().map(|s| Tensor::zeros(&s.shape)).collect() }
    }

    pub fn check(&self, cfg: &CodecConfig) -> Result<()> {
        let specs = cfg.param_specs();
        if specs.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&self.tensors) {
            if s.shape != t.shape() {
                return Err(Error::ShapeMismatch { expected: s.shape.clone(), actual: t.shape().to_vec() });
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> CodecParams<U> {
        CodecParams { tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

/// Walks parameter node ids in declaration order while building a graph.
struct Cursor<'a> {
    ids: &'a [NodeId],
    pos: usize,
}

impl Cursor<'_> {
    fn pair(&mut self) -> (NodeId, NodeId) {
        let p = (self.ids[self.pos], self.ids[self.pos + 1]);
        self.pos += 2;
        p
    }
}

fn residual<T: Real>(tape: &mut Tape<T>, x: NodeId, cur: &mut Cursor<'_>, cfg: &CodecConfig) -> Result<NodeId> {
    let (w1, b1) = cur.pair();
    let (w2, b2) = cur.pair();
    let a = tape.activation(x, cfg.activation);
    let h = tape.conv1d(a, w1, Some(b1), 1, cfg.kernel / 2)?;
    let a = tape.activation(h, cfg.activation);
    let h = tape.conv1d(a, w2, Some(b2), 1, 0)?;
    tape.add(x, h)
}

/// Records the encoder on `tape`; `params` are the encoder's parameter nodes.
/// Input `[d, W]` becomes latent `[C, W/q]`.
pub fn encoder_graph<T: Real>(tape: &mut Tape<T>, x: NodeId, params: &[NodeId], cfg: &CodecConfig) -> Result<NodeId> {
    let mut cur = Cursor { ids: params, pos: 0 };
    let pad = cfg.kernel / 2;
    let (w, b) = cur.pair();
    let mut h = tape.conv1d(x, w, Some(b), 1, pad)?;
    h = tape.activation(h, cfg.activation);
    for _ in 0..cfg.stages() {
        let (w, b) = cur.pair();
        h = tape.conv1d(h, w, Some(b), 2, 1)?;
        for _ in 0..cfg.res_blocks {
            h = residual(tape, h, &mut cur, cfg)?;
        }
    }
    let (w, b) = cur.pair();
    let z = tape.conv1d(h, w, Some(b), 1, pad)?;
    if cfg.normalize_latent {
        tape.normalize_columns(z, T::lit(LATENT_NORM_EPS))
    } else {
        Ok(z)
    }
}

/// Records the decoder on `tape`; `params` are the decoder's parameter nodes.
/// Latent `[C, τ]` becomes reconstruction `[d, τ·q]`.
pub fn decoder_graph<T: Real>(tape: &mut Tape<T>, zq: NodeId, params: &[NodeId], cfg: &CodecConfig) -> Result<NodeId> {
    let mut cur = Cursor { ids: params, pos: 0 };
    let pad = cfg.kernel / 2;
    let (w, b) = cur.pair();
    let mut h = tape.conv1d(zq, w, Some(b), 1, pad)?;
    h = tape.activation(h, cfg.activation);
    for _ in 0..cfg.stages() {
        for _ in 0..cfg.res_blocks {
            h = residual(tape, h, &mut cur, cfg)?;
        }
        let (w, b) = cur.pair();
        h = tape.conv_transpose1d(h, w, Some(b), 2, 1)?;
    }
    let (w, b) = cur.pair();
    h = tape.conv1d(h, w, Some(b), 1, pad)?;
    h = tape.activation(h, cfg.activation);
    let (w, b) = cur.pair();
    tape.conv1d(h, w, Some(b), 1, pad)
}

/// A trained (or freshly initialized) codec: weights plus codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec<T> {
    pub config: CodecConfig,
    pub params: CodecParams<T>,
    pub codebook: Codebook<T>,
}

impl<T: Real> Codec<T> {
    pub fn new(config: CodecConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let params = CodecParams::init(&config, rng);
        let codebook = Codebook::random(config.codebook_size, config.code_dim, rng)?;
        Ok(Self { config, params, codebook })
    }

    pub fn from_parts(config: CodecConfig, params: CodecParams<T>, codebook: Codebook<T>) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        if codebook.size() != config.codebook_size || codebook.dim() != config.code_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![config.codebook_size, config.code_dim],
                actual: vec![codebook.size(), codebook.dim()],
            });
        }
        Ok(Self { config, params, codebook })
    }

    fn input_tensor(&self, seq: &MotionSequence) -> Result<Tensor<T>> {
        if seq.len() != self.config.window || seq.width() != self.config.width {
            return Err(Error::invalid(format!(
                "codec expects {} frames of width {}, got {} of width {}",
                self.config.window,
                self.config.width,
                seq.len(),
                seq.width()
            )));
        }
        Tensor::from_vec(&[seq.width(), seq.len()], seq.to_real())
    }

    /// Latent `[C, τ]` for a window of exactly `W` frames.
    pub fn encode(&self, seq: &MotionSequence) -> Result<Tensor<T>> {
        let x = self.input_tensor(seq)?;
        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let n_enc = self.config.encoder_param_count();
        let ids: Vec<NodeId> = self.params.tensors[..n_enc].iter().map(|p| tape.constant(p.clone())).collect();
        let z = encoder_graph(&mut tape, xn, &ids, &self.config)?;
        Ok(tape.value(z).clone())
    }

    pub fn quantize(&self, z: &Tensor<T>) -> Result<QuantizedClip<T>> {
        quantize(z, &self.codebook)
    }

    /// Reconstruction `[d, W]` from code indices.
    pub fn decode(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if indices.len() != self.config.steps() {
            return Err(Error::invalid(format!(
                "expected {} code indices, got {}",
                self.config.steps(),
                indices.len()
            )));
        }
        let zq = embed(indices, &self.codebook)?;
        let mut tape = Tape::new();
        let zn = tape.constant(zq);
        let n_enc = self.config.encoder_param_count();
        let ids: Vec<NodeId> = self.params.tensors[n_enc..].iter().map(|p| tape.constant(p.clone())).collect();
        let y = decoder_graph(&mut tape, zn, &ids, &self.config)?;
        Ok(tape.value(y).clone())
    }

    /// Pads or truncates `seq` to the window, then encodes and quantizes it.
    pub fn tokenize(&self, seq: &MotionSequence) -> Result<QuantizedClip<T>> {
        let window = seq.pad_or_truncate(self.config.window_spec())?;
        let z = self.encode(&window)?;
        let mask = downsample_mask(window.mask(), self.config.ratio);
        self.quantize(&z)?.with_source_mask(mask)
    }

    /// Decodes indices into a fully observed motion sequence.
    pub fn detokenize(&self, indices: &[usize], fps: f32) -> Result<MotionSequence> {
        let y = self.decode(indices)?;
        let data: Vec<f32> = y.data().iter().map(|v| v.to_f64_lossy() as f32).collect();
        MotionSequence::from_channel_major(self.config.width, fps, data, vec![true; self.config.window])
    }
}
