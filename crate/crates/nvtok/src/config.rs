//! TOML run configuration for `nvtok train`. Every key is optional; missing
//! keys take the reference defaults.

use std::path::Path;

use nvtok_core::codec::CodecConfig;
use nvtok_core::losses::LossWeights;
use nvtok_core::motion::StreamKind;
use nvtok_core::optim::LrSchedule;
use nvtok_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::ActivationName;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSection,
    pub codec: CodecSection,
    pub loss: LossSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub base_lr: f64,
    pub warmup_frac: f64,
    pub decay_points: Vec<(f64, f64)>,
    pub ema_decay: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub val_frac: f64,
    pub seed: u64,
    pub init_codebook_from_data: bool,
    pub reseed_dead_codes: bool,
    /// Smooth each training sequence before windowing.
    pub smooth: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            grad_accum_steps: t.grad_accum_steps,
            base_lr: t.schedule.base_lr,
            warmup_frac: t.schedule.warmup_frac,
            decay_points: t.schedule.decay_points,
            ema_decay: t.ema_decay,
            weight_decay: t.weight_decay,
            grad_clip_norm: t.grad_clip_norm,
            adam_betas: t.adam_betas,
            adam_eps: t.adam_eps,
            val_frac: t.val_frac,
            seed: t.seed,
            init_codebook_from_data: t.init_codebook_from_data,
            reseed_dead_codes: t.reseed_dead_codes,
            smooth: false,
        }
    }
}

/// Codec overrides; `None` keeps the stream default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub window: Option<usize>,
    pub ratio: Option<usize>,
    pub codebook_size: Option<usize>,
    pub code_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub kernel: Option<usize>,
    pub res_blocks: Option<usize>,
    pub activation: Option<ActivationName>,
    pub normalize_latent: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub beta: f64,
    pub lambda_f_recon: f64,
    pub lambda_psi: f64,
    pub lambda_jaw: f64,
    pub lambda_f_vel: f64,
    pub lambda_theta: f64,
    pub lambda_b_recon: f64,
    pub lambda_b_vel: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            beta: w.beta,
            lambda_f_recon: w.lambda_f_recon,
            lambda_psi: w.lambda_psi,
            lambda_jaw: w.lambda_jaw,
            lambda_f_vel: w.lambda_f_vel,
            lambda_theta: w.lambda_theta,
            lambda_b_recon: w.lambda_b_recon,
            lambda_b_vel: w.lambda_b_vel,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn codec_config(&self, stream: StreamKind) -> CodecConfig {
        let c = &self.codec;
        let base = CodecConfig::for_stream(stream);
        CodecConfig {
            width: base.width,
            window: c.window.unwrap_or(base.window),
            ratio: c.ratio.unwrap_or(base.ratio),
            codebook_size: c.codebook_size.unwrap_or(base.codebook_size),
            code_dim: c.code_dim.unwrap_or(base.code_dim),
            hidden: c.hidden.unwrap_or(base.hidden),
            kernel: c.kernel.unwrap_or(base.kernel),
            res_blocks: c.res_blocks.unwrap_or(base.res_blocks),
            activation: c.activation.map_or(base.activation, Into::into),
            normalize_latent: c.normalize_latent.unwrap_or(base.normalize_latent),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            grad_accum_steps: t.grad_accum_steps,
            schedule: LrSchedule {
                base_lr: t.base_lr,
                warmup_frac: t.warmup_frac,
                decay_points: t.decay_points.clone(),
            },
            ema_decay: t.ema_decay,
            weight_decay: t.weight_decay,
            grad_clip_norm: t.grad_clip_norm,
            adam_betas: t.adam_betas,
            adam_eps: t.adam_eps,
            val_frac: t.val_frac,
            seed: t.seed,
            init_codebook_from_data: t.init_codebook_from_data,
            reseed_dead_codes: t.reseed_dead_codes,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let l = &self.loss;
        LossWeights {
            beta: l.beta,
            lambda_f_recon: l.lambda_f_recon,
            lambda_psi: l.lambda_psi,
            lambda_jaw: l.lambda_jaw,
            lambda_f_vel: l.lambda_f_vel,
            lambda_theta: l.lambda_theta,
            lambda_b_recon: l.lambda_b_recon,
            lambda_b_vel: l.lambda_b_vel,
        }
    }
}
