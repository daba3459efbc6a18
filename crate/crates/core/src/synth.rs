//! Seeded generator of smooth motion-like sequences for tests and demos.
//!
//! Each channel is a fixed linear mix of a few band-limited sinusoidal sources
//! plus a per-channel offset and a little smoothed noise, so the corpus lives
//! near a low-dimensional manifold the way real pose parameters do.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::savgol::SavitzkyGolay;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    /// Valid frames per sequence are drawn uniformly from `min_len..=max_len`.
    pub min_len: usize,
    pub max_len: usize,
    /// Frames per sequence after padding; 0 leaves sequences unpadded.
    pub pad_to: usize,
    pub fps: f32,
    pub sources: usize,
    /// Source frequency range in Hz.
    pub freq: (f64, f64),
    pub amplitude: f64,
    pub noise: f64,
}

impl SynthConfig {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            min_len: 384,
            max_len: 512,
            pad_to: 512,
            fps: 25.0,
            sources: 2,
            freq: (0.1, 0.3),
            amplitude: 0.5,
            noise: 0.005,
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.sources == 0 {
            return Err(Error::invalid("width and source count must be positive"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid("need 0 < min_len <= max_len"));
        }
        if self.pad_to != 0 && self.pad_to < self.max_len {
            return Err(Error::invalid("pad_to shorter than max_len"));
        }
        if !(self.fps > 0.0) || !(self.freq.0 > 0.0 && self.freq.0 <= self.freq.1) {
            return Err(Error::invalid("fps and frequency range must be positive"));
        }
        Ok(())
    }
}

/// `n` sequences; identical output for identical `(cfg, seed)`.
pub fn smooth_corpus(n: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<MotionSequence>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (cfg.sources as f64).sqrt();
    let mix: Vec<f64> =
        (0..cfg.width * cfg.sources).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) * scale).collect();
    let offsets: Vec<f64> = (0..cfg.width).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let sg = SavitzkyGolay::new(9, 2)?;

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let total = if cfg.pad_to == 0 { len } else { cfg.pad_to };
        let sources: Vec<Vec<f64>> = (0..cfg.sources)
            .map(|_| {
                let f = rng.gen_range(cfg.freq.0..=cfg.freq.1);
                let phase = rng.gen_range(0.0..core::f64::consts::TAU);
                let amp = cfg.amplitude * rng.gen_range(0.5..1.0);
                let w = core::f64::consts::TAU * f / cfg.fps as f64;
                (0..len).map(|t| amp * Float::sin(w * t as f64 + phase)).collect()
            })
            .collect();
        let mut data = vec![0.0f32; cfg.width * total];
        for c in 0..cfg.width {
            let noise: Vec<f64> =
                (0..len).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) * cfg.noise).collect();
            let noise = sg.apply(&noise);
            let row = &mut data[c * total..c * total + len];
            for (t, v) in row.iter_mut().enumerate() {
                let mut x = offsets[c] + noise[t];
                for (j, s) in sources.iter().enumerate() {
                    x += mix[c * cfg.sources + j] * s[t];
                }
                *v = x as f32;
            }
        }
        let mut mask = vec![false; total];
        mask[..len].fill(true);
        out.push(MotionSequence::from_channel_major(cfg.width, cfg.fps, data, mask)?);
    }
    Ok(out)
}
