//! Optimization of a codec: per-sample reverse passes, gradient accumulation,
//! clipping, AdamW, and EMA codebook updates at accumulation boundaries.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::codec::{decoder_graph, encoder_graph, Codec, CodecConfig};
use crate::error::{Error, Result};
use crate::losses::{commitment_loss, recon_loss, velocity_loss, LossLayout, LossWeights, ReconKind};
use crate::motion::{MotionSequence, StreamKind};
use crate::optim::{clip_global_norm, AdamW, LrSchedule};
use crate::quantizer::{downsample_mask, latent_rows, quantize, Codebook};
use crate::real::Real;
use crate::tensor::Tensor;

#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub schedule: LrSchedule,
    pub ema_decay: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Fraction of the corpus held out for checkpoint selection.
    pub val_frac: f64,
    pub seed: u64,
    /// Seed the codebook from encoder latents of the training set before step 0.
    pub init_codebook_from_data: bool,
    /// Re-seed codes unused during an epoch from recent latents.
    pub reseed_dead_codes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            grad_accum_steps: 4,
            schedule: LrSchedule::default(),
            ema_decay: 0.99,
            weight_decay: 0.1,
            grad_clip_norm: 1.0,
            adam_betas: (0.9, 0.99),
            adam_eps: 1e-8,
            val_frac: 0.1,
            seed: 0,
            init_codebook_from_data: true,
            reseed_dead_codes: true,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if !(s.warmup_frac > 0.0 && s.warmup_frac < 0.5) {
            return Err(Error::invalid(format!("warmup fraction {} outside (0, 0.5)", s.warmup_frac)));
        }
        if !(s.base_lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip_norm > 0.0) {
            return Err(Error::invalid("learning rate and clip norm must be positive"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::invalid("EMA decay must lie in (0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum_steps == 0 {
            return Err(Error::invalid("epochs, batch size and accumulation steps must be positive"));
        }
        if !(self.val_frac >= 0.0 && self.val_frac < 1.0) {
            return Err(Error::invalid("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Optimizer updates over a run on `n_train` sequences.
    pub fn total_steps(&self, n_train: usize) -> usize {
        let batches = n_train.div_ceil(self.batch_size);
        self.epochs * batches.div_ceil(self.grad_accum_steps)
    }
}

/// Weighted terms of the training loss for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub layout: LossLayout,
    pub recon_weight: f64,
    pub vel_weight: f64,
    pub beta: f64,
    pub recon_kind: ReconKind,
}

impl Objective {
    pub fn for_stream(kind: StreamKind, w: &LossWeights) -> Self {
        let (recon_weight, vel_weight) = w.stream_weights(kind);
        Self {
            layout: LossLayout::for_stream(kind, w),
            recon_weight,
            vel_weight,
            beta: w.beta,
            recon_kind: ReconKind::L1,
        }
    }
}

/// How the forward pass picks the quantized latent.
#[derive(Debug, Clone)]
pub enum QuantMode<'a, T> {
    /// Nearest codebook entry (training and inference).
    Nearest,
    /// Straight-through surrogate with the offset frozen: the decoder sees
    /// `z + (quantized − z_ref)` and the commitment target is `quantized`.
    /// Used for finite-difference checks, where the surrogate is smooth.
    Frozen { quantized: &'a Tensor<T>, z_ref: &'a Tensor<T> },
}

/// Loss terms, parameter gradients and quantizer outputs for one window.
#[derive(Debug, Clone)]
pub struct SampleOutput<T> {
    pub vq: T,
    pub recon: T,
    pub vel: T,
    pub total: T,
    pub grads: Vec<Tensor<T>>,
    pub latent: Tensor<T>,
    pub quantized: Tensor<T>,
    pub indices: Vec<usize>,
    pub latent_mask: Vec<bool>,
}

/// Forward and reverse pass for one padded window `x: [d, W]`.
pub fn sample_gradients<T: Real>(
    codec: &Codec<T>,
    objective: &Objective,
    x: &Tensor<T>,
    mask: &[bool],
    mode: QuantMode<'_, T>,
) -> Result<SampleOutput<T>> {
    let cfg = &codec.config;
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let ids: Vec<NodeId> = codec.params.tensors.iter().map(|p| tape.parameter(p.clone())).collect();
    let n_enc = cfg.encoder_param_count();

    let z = encoder_graph(&mut tape, xn, &ids[..n_enc], cfg)?;
    let z_val = tape.value(z).clone();
    let (zq_val, target, indices) = match mode {
        QuantMode::Nearest => {
            let clip = quantize(&z_val, &codec.codebook)?;
            (clip.quantized.clone(), clip.quantized, clip.indices)
        }
        QuantMode::Frozen { quantized, z_ref } => {
            let mut v = z_val.clone();
            for ((o, q), r) in v.data_mut().iter_mut().zip(quantized.data()).zip(z_ref.data()) {
                *o = *o + (*q - *r);
            }
            (v, quantized.clone(), Vec::new())
        }
    };
    let st = tape.straight_through(z, zq_val)?;
    let y = decoder_graph(&mut tape, st, &ids[n_enc..], cfg)?;

    let latent_mask = downsample_mask(mask, cfg.ratio);
    let commit = commitment_loss(&z_val, &target, &latent_mask, T::lit(objective.beta))?;
    let rec = recon_loss(x, tape.value(y), mask, &objective.layout, objective.recon_kind)?;
    let vel = velocity_loss(x, tape.value(y), mask, &objective.layout)?;
    let (vq_v, rec_v, vel_v) = (commit.value, rec.value, vel.value);
    let ln_vq = tape.loss(z, vq_v, commit.grad)?;
    let ln_rec = tape.loss(y, rec_v, rec.grad)?;
    let ln_vel = tape.loss(y, vel_v, vel.grad)?;
    let total = tape.weighted_sum(&[
        (ln_vq, T::one()),
        (ln_rec, T::lit(objective.recon_weight)),
        (ln_vel, T::lit(objective.vel_weight)),
    ]);
    let total_v = tape.scalar(total);
    let mut g = tape.backward(total)?;
    let grads = ids
        .iter()
        .zip(&codec.params.tensors)
        .map(|(&id, p)| g.take(id).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok(SampleOutput {
        vq: vq_v,
        recon: rec_v,
        vel: vel_v,
        total: total_v,
        grads,
        latent: z_val,
        quantized: target,
        indices,
        latent_mask,
    })
}

/// Mean loss terms over a set of windows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalStats {
    pub vq: f64,
    pub recon: f64,
    pub vel: f64,
    pub total: f64,
}

/// One micro-batch, reported as a line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Micro-batch counter since the start of training.
    pub step: usize,
    /// Optimizer updates applied so far.
    pub update: usize,
    pub lr: f64,
    pub loss: f64,
    pub vq: f64,
    pub recon: f64,
    pub vel: f64,
    /// Pre-clip gradient norm when this micro-batch closed an accumulation window.
    pub grad_norm: Option<f64>,
}

/// Owns a codec and its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub codec: Codec<T>,
    pub objective: Objective,
    pub config: TrainConfig,
    optimizer: AdamW<T>,
    total_steps: usize,
    updates: usize,
    micro_steps: usize,
    pending: usize,
    accum: Vec<Tensor<T>>,
    latents: Vec<T>,
    assignments: Vec<usize>,
    recent_latents: Vec<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(codec: Codec<T>, objective: Objective, config: TrainConfig, total_steps: usize) -> Result<Self> {
        config.validate()?;
        if objective.layout.width() != codec.config.width {
            return Err(Error::ShapeMismatch {
                expected: vec![codec.config.width],
                actual: vec![objective.layout.width()],
            });
        }
        let shapes: Vec<&[usize]> = codec.params.tensors.iter().map(Tensor::shape).collect();
        let optimizer =
            AdamW::new(&shapes, config.adam_betas.0, config.adam_betas.1, config.adam_eps, config.weight_decay);
        let accum = codec.params.tensors.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            codec,
            objective,
            config,
            optimizer,
            total_steps: total_steps.max(1),
            updates: 0,
            micro_steps: 0,
            pending: 0,
            accum,
            latents: Vec::new(),
            assignments: Vec::new(),
            recent_latents: Vec::new(),
        })
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    fn window(&self, seq: &MotionSequence) -> Result<Tensor<T>> {
        let cfg = &self.codec.config;
        if seq.len() != cfg.window || seq.width() != cfg.width {
            return Err(Error::invalid(format!(
                "training windows must be {}x{}, got {}x{}",
                cfg.width,
                cfg.window,
                seq.width(),
                seq.len()
            )));
        }
        Tensor::from_vec(&[cfg.width, cfg.window], seq.to_real())
    }

    /// Forward/backward on one micro-batch of padded windows. Parameters and
    /// the codebook change only when `grad_accum_steps` micro-batches have
    /// been accumulated.
    pub fn train_step(&mut self, batch: &[MotionSequence], epoch: usize) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut outs = Vec::with_capacity(batch.len());
        for seq in batch {
            let x = self.window(seq)?;
            let out = sample_gradients(&self.codec, &self.objective, &x, seq.mask(), QuantMode::Nearest)?;
            if !out.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: self.micro_steps,
                    detail: format!(
                        "vq={:?} recon={:?} vel={:?} at update {}",
                        out.vq, out.recon, out.vel, self.updates
                    ),
                });
            }
            outs.push(out);
        }

        let inv = T::lit(1.0 / batch.len() as f64);
        let mut mean = EvalStats::default();
        for out in &outs {
            for (a, g) in self.accum.iter_mut().zip(&out.grads) {
                for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x = *x + *y * inv;
                }
            }
            let rows = latent_rows(&out.latent, &out.latent_mask);
            self.latents.extend_from_slice(&rows);
            self.assignments.extend(out.indices.iter().zip(&out.latent_mask).filter(|(_, m)| **m).map(|(k, _)| *k));
            let n = batch.len() as f64;
            mean.vq += out.vq.to_f64_lossy() / n;
            mean.recon += out.recon.to_f64_lossy() / n;
            mean.vel += out.vel.to_f64_lossy() / n;
            mean.total += out.total.to_f64_lossy() / n;
        }
        self.pending += 1;
        self.micro_steps += 1;

        let lr = self.config.schedule.lr_at(self.updates.min(self.total_steps), self.total_steps)?;
        let grad_norm = if self.pending >= self.config.grad_accum_steps { Some(self.apply_update()?) } else { None };
        Ok(StepRecord {
            epoch,
            step: self.micro_steps - 1,
            update: self.updates,
            lr,
            loss: mean.total,
            vq: mean.vq,
            recon: mean.recon,
            vel: mean.vel,
            grad_norm,
        })
    }

    /// Applies any partially accumulated gradient (end of epoch).
    pub fn flush(&mut self) -> Result<Option<f64>> {
        if self.pending == 0 {
            return Ok(None);
        }
        self.apply_update().map(Some)
    }

    fn apply_update(&mut self) -> Result<f64> {
        let inv = T::lit(1.0 / self.pending as f64);
        for a in &mut self.accum {
            a.scale(inv);
        }
        let norm = clip_global_norm(&mut self.accum, self.config.grad_clip_norm);
        let lr = self.config.schedule.lr_at(self.updates.min(self.total_steps), self.total_steps)?;
        self.optimizer.step(&mut self.codec.params.tensors, &self.accum, lr);
        self.codec.codebook.ema_update(&self.latents, &self.assignments, T::lit(self.config.ema_decay))?;
        self.updates += 1;
        self.pending = 0;
        for a in &mut self.accum {
            a.data_mut().fill(T::zero());
        }
        self.recent_latents = core::mem::take(&mut self.latents);
        self.assignments.clear();
        Ok(norm)
    }

    /// Re-seeds codes unused since the last usage reset, then resets usage.
    pub fn end_epoch(&mut self, rng: &mut impl Rng) -> usize {
        let n =
            if self.config.reseed_dead_codes { self.codec.codebook.reseed_dead(&self.recent_latents, rng) } else { 0 };
        self.codec.codebook.reset_usage();
        n
    }

    /// Mean loss terms (nearest-code quantization, no gradient) over windows.
    pub fn evaluate(&self, seqs: &[MotionSequence]) -> Result<EvalStats> {
        evaluate(&self.codec, &self.objective, seqs)
    }
}

/// Mean loss terms of `codec` over padded windows.
pub fn evaluate<T: Real>(codec: &Codec<T>, objective: &Objective, seqs: &[MotionSequence]) -> Result<EvalStats> {
    let mut s = EvalStats::default();
    if seqs.is_empty() {
        return Ok(s);
    }
    let n = seqs.len() as f64;
    for seq in seqs {
        let x = Tensor::from_vec(&[seq.width(), seq.len()], seq.to_real::<T>())?;
        let z = codec.encode(seq)?;
        let clip = quantize(&z, &codec.codebook)?;
        let y = codec.decode(&clip.indices)?;
        let lmask = downsample_mask(seq.mask(), codec.config.ratio);
        let vq = commitment_loss(&z, &clip.quantized, &lmask, T::lit(objective.beta))?.value.to_f64_lossy();
        let recon = recon_loss(&x, &y, seq.mask(), &objective.layout, objective.recon_kind)?.value.to_f64_lossy();
        let vel = velocity_loss(&x, &y, seq.mask(), &objective.layout)?.value.to_f64_lossy();
        s.vq += vq / n;
        s.recon += recon / n;
        s.vel += vel / n;
        s.total += (vq + objective.recon_weight * recon + objective.vel_weight * vel) / n;
    }
    Ok(s)
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: EvalStats,
    pub active_codes: usize,
    pub reseeded: usize,
}

#[derive(Debug, Clone)]
pub enum FitEvent<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    /// Codec with the lowest validation reconstruction loss.
    pub best: Codec<T>,
    pub best_epoch: usize,
    pub best_val_recon: f64,
    pub step0_val: EvalStats,
    pub epochs: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Seeded split into `(train, validation)` indices.
pub fn split_indices(n: usize, val_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM);
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut rng);
    let n_val =
        if n < 2 { 0 } else { (((n as f64) * val_frac).round() as usize).clamp(usize::from(val_frac > 0.0), n - 1) };
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn shuffle<R: Rng>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

/// Trains a codec from scratch on `dataset` (sequences of any length; each is
/// padded or truncated to the window). Deterministic for a given seed.
pub fn fit<T: Real>(
    dataset: &[MotionSequence],
    codec_config: CodecConfig,
    objective: Objective,
    config: TrainConfig,
    mut on_event: impl FnMut(FitEvent<'_>),
) -> Result<FitResult<T>> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    config.validate()?;
    codec_config.validate()?;
    let spec = codec_config.window_spec();
    let windows = dataset.iter().map(|s| s.pad_or_truncate(spec)).collect::<Result<Vec<_>>>()?;
    let (train_idx, val_idx) = split_indices(windows.len(), config.val_frac, config.seed);
    let train: Vec<MotionSequence> = train_idx.iter().map(|&i| windows[i].clone()).collect();
    let val: Vec<MotionSequence> =
        if val_idx.is_empty() { train.clone() } else { val_idx.iter().map(|&i| windows[i].clone()).collect() };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut codec = Codec::<T>::new(codec_config, &mut rng)?;
    if config.init_codebook_from_data {
        let mut rows = Vec::new();
        for seq in &train {
            let z = codec.encode(seq)?;
            rows.extend(latent_rows(&z, &downsample_mask(seq.mask(), codec_config.ratio)));
        }
        codec.codebook = Codebook::from_latents(codec_config.codebook_size, codec_config.code_dim, &rows, &mut rng)?;
    }

    let total_steps = config.total_steps(train.len());
    let mut trainer = Trainer::new(codec, objective, config.clone(), total_steps)?;
    let step0_val = trainer.evaluate(&val)?;
    let mut best = trainer.codec.clone();
    let mut best_val_recon = step0_val.recon;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        shuffle(&mut order, &mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<MotionSequence> = chunk.iter().map(|&i| train[i].clone()).collect();
            let rec = trainer.train_step(&batch, epoch)?;
            loss_sum += rec.loss;
            batches += 1;
            on_event(FitEvent::Step(&rec));
        }
        trainer.flush()?;
        let active_codes = trainer.codec.codebook.active_codes();
        let reseeded = trainer.end_epoch(&mut rng);
        let val_stats = trainer.evaluate(&val)?;
        if val_stats.recon < best_val_recon {
            best_val_recon = val_stats.recon;
            best = trainer.codec.clone();
            best_epoch = epoch;
        }
        let record =
            EpochRecord { epoch, train_loss: loss_sum / batches.max(1) as f64, val: val_stats, active_codes, reseeded };
        on_event(FitEvent::Epoch(&record));
        epochs.push(record);
    }

    Ok(FitResult {
        best,
        best_epoch,
        best_val_recon,
        step0_val,
        epochs,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Fraction of codes selected at least once when tokenizing `seqs`.
pub fn codebook_utilization<T: Real>(codec: &Codec<T>, seqs: &[MotionSequence]) -> Result<f64> {
    let mut used = vec![false; codec.config.codebook_size];
    for seq in seqs {
        let clip = codec.tokenize(seq)?;
        for (k, m) in clip.indices.iter().zip(&clip.source_mask) {
            if *m {
                used[*k] = true;
            }
        }
    }
    Ok(used.iter().filter(|u| **u).count() as f64 / used.len() as f64)
}
