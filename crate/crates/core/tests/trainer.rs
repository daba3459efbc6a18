mod support;

use nvtok_core::codec::Codec;
use nvtok_core::motion::MotionSequence;
use nvtok_core::optim::LrSchedule;
use nvtok_core::quantizer::latent_rows;
use nvtok_core::synth::{smooth_corpus, SynthConfig};
use nvtok_core::tensor::Tensor;
use nvtok_core::trainer::{fit, sample_gradients, FitEvent, QuantMode, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::grad::{toy_config, toy_objective};

fn toy_corpus(n: usize, seed: u64) -> Vec<MotionSequence> {
    let cfg = SynthConfig { min_len: 12, max_len: 16, pad_to: 16, ..SynthConfig::new(4) };
    smooth_corpus(n, &cfg, seed).unwrap()
}

fn toy_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        grad_accum_steps: 1,
        schedule: LrSchedule { base_lr: 1e-2, ..LrSchedule::default() },
        val_frac: 0.25,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn trainer(cfg: TrainConfig, seed: u64) -> Trainer<f64> {
    let codec = Codec::<f64>::new(toy_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    // mid-schedule so the learning rate is non-zero on the first update
    let mut t = Trainer::new(codec, toy_objective(), cfg, 10).unwrap();
    t.config.schedule.warmup_frac = 0.01;
    t
}

fn max_diff(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

#[test]
fn accumulated_micro_batches_match_one_large_batch() {
    let data = toy_corpus(8, 3);
    let split = TrainConfig { grad_accum_steps: 4, ..toy_train_config() };
    let whole = TrainConfig { grad_accum_steps: 1, ..toy_train_config() };
    let mut a = trainer(split, 5);
    let mut b = trainer(whole, 5);
    for chunk in data.chunks(2) {
        a.train_step(chunk, 1).unwrap();
    }
    b.train_step(&data, 1).unwrap();
    assert_eq!(a.updates(), 1);
    assert_eq!(b.updates(), 1);
    assert!(max_diff(&a.codec.params.tensors, &b.codec.params.tensors) < 1e-6);
    let cb = a
        .codec
        .codebook
        .entries()
        .iter()
        .zip(b.codec.codebook.entries())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(cb < 1e-6);
}

#[test]
fn zero_learning_rate_freezes_weights_but_not_codebook() {
    let data = toy_corpus(4, 7);
    let cfg = TrainConfig { schedule: LrSchedule { base_lr: 1e-30, ..LrSchedule::default() }, ..toy_train_config() };
    let mut t = trainer(cfg, 9);
    let before = t.codec.clone();
    t.train_step(&data, 1).unwrap();
    assert!(max_diff(&before.params.tensors, &t.codec.params.tensors) < 1e-20);
    assert_ne!(before.codebook.entries(), t.codec.codebook.entries());
}

#[test]
fn codebook_moves_only_by_its_moving_average() {
    let data = toy_corpus(4, 13);
    let mut t = trainer(toy_train_config(), 2);
    let mut expect = t.codec.codebook.clone();
    let mut latents = Vec::new();
    let mut assign = Vec::new();
    for seq in &data {
        let x = Tensor::from_vec(&[4, 16], seq.to_real::<f64>()).unwrap();
        let out = sample_gradients(&t.codec, &t.objective, &x, seq.mask(), QuantMode::Nearest).unwrap();
        latents.extend(latent_rows(&out.latent, &out.latent_mask));
        assign.extend(out.indices.iter().zip(&out.latent_mask).filter(|(_, m)| **m).map(|(k, _)| *k));
    }
    expect.ema_update(&latents, &assign, t.config.ema_decay).unwrap();
    t.train_step(&data, 1).unwrap();
    assert_eq!(expect.entries(), t.codec.codebook.entries());
}

#[test]
fn non_finite_loss_is_reported() {
    let data = toy_corpus(2, 1);
    let mut t = trainer(toy_train_config(), 1);
    t.codec.params.tensors[0].data_mut().fill(f64::NAN);
    let err = t.train_step(&data, 1).unwrap_err();
    assert!(matches!(err, nvtok_core::Error::NonFiniteLoss { .. }), "{err:?}");
}

#[test]
fn partial_accumulation_is_flushed() {
    let data = toy_corpus(4, 2);
    let mut t = trainer(TrainConfig { grad_accum_steps: 4, ..toy_train_config() }, 4);
    t.train_step(&data[..2], 1).unwrap();
    assert_eq!(t.updates(), 0);
    assert!(t.flush().unwrap().is_some());
    assert_eq!(t.updates(), 1);
    assert!(t.flush().unwrap().is_none());
}

#[test]
fn fit_is_deterministic_and_keeps_best_checkpoint() {
    let data = toy_corpus(12, 21);
    let run = || {
        let mut losses = Vec::new();
        let r = fit::<f64>(&data, toy_config(), toy_objective(), toy_train_config(), |e| {
            if let FitEvent::Step(s) = e {
                losses.push(s.loss);
            }
        })
        .unwrap();
        (r, losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert_eq!(a.best, b.best);
    assert_eq!(a.epochs.len(), 3);
    assert_eq!(a.train_indices.len() + a.val_indices.len(), 12);
    let min_val = a.epochs.iter().map(|e| e.val.recon).fold(a.step0_val.recon, f64::min);
    assert_eq!(a.best_val_recon, min_val);
    assert!(a.best_val_recon <= a.epochs.last().unwrap().val.recon);
}

#[test]
fn fit_rejects_empty_dataset() {
    assert!(fit::<f64>(&[], toy_config(), toy_objective(), toy_train_config(), |_| {}).is_err());
}
