//! Central finite-difference oracle for tape primitives, losses and the toy codec.

use nvtok_core::autodiff::{Activation, NodeId, Tape};
use nvtok_core::codec::{Codec, CodecConfig};
use nvtok_core::losses::{commitment_loss, recon_loss, velocity_loss, LossLayout, LossTerm, LossWeights, ReconKind};
use nvtok_core::quantizer::quantize;
use nvtok_core::trainer::{sample_gradients, Objective, QuantMode};
use nvtok_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `|a − b| / max(|a|, |b|)` in the Euclidean norm; 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` with respect to every element of every input.
pub fn numeric_grads(inputs: &[Tensor<f64>], mut f: impl FnMut(&[Tensor<f64>]) -> f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let base = work[i].data()[j];
            work[i].data_mut()[j] = base + STEP;
            let up = f(&work);
            work[i].data_mut()[j] = base - STEP;
            let down = f(&work);
            work[i].data_mut()[j] = base;
            g[j] = (up - down) / (2.0 * STEP);
        }
        out.push(g);
    }
    out
}

/// Checks the tape gradient of `sum(r ⊙ build(inputs))` for a fixed random `r`.
/// Returns the largest relative error over inputs.
pub fn check_tape(inputs: &[Tensor<f64>], seed: u64, build: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId) -> f64 {
    let run = |xs: &[Tensor<f64>], readout: Option<&Tensor<f64>>| {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| tape.parameter(x.clone())).collect();
        let y = build(&mut tape, &ids);
        let r = match readout {
            Some(r) => r.clone(),
            None => random(tape.value(y).shape(), &mut ChaCha8Rng::seed_from_u64(seed)),
        };
        let v: f64 = tape.value(y).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
        (tape, ids, y, r, v)
    };
    let (mut tape, ids, y, r, v) = run(inputs, None);
    let root = tape.loss(y, v, r.clone()).unwrap();
    let mut g = tape.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, x)| g.take(id).unwrap_or_else(|| Tensor::zeros(x.shape())).into_data())
        .collect();
    let numeric = numeric_grads(inputs, |xs| run(xs, Some(&r)).4);
    analytic.iter().zip(&numeric).map(|(a, n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// Checks a closed-form loss gradient with respect to its prediction argument.
pub fn check_loss(pred: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> LossTerm<f64>) -> f64 {
    let analytic = f(pred).grad.into_data();
    let numeric = numeric_grads(std::slice::from_ref(pred), |xs| f(&xs[0]).value);
    rel_err(&analytic, &numeric[0])
}

/// `(name, relative error)` for every primitive and loss.
pub fn primitive_suite(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, e: f64| out.push((name.to_string(), e));

    for (stride, pad, k) in [(1, 1, 3), (2, 1, 4), (1, 0, 1), (3, 2, 5)] {
        let xs = [random(&[3, 11], &mut rng), random(&[4, 3, k], &mut rng), random(&[4], &mut rng)];
        let e = check_tape(&xs, seed, |t, ids| t.conv1d(ids[0], ids[1], Some(ids[2]), stride, pad).unwrap());
        push(&format!("conv1d stride {stride} pad {pad} kernel {k}"), e);
    }
    for (stride, pad, k) in [(2, 1, 4), (1, 1, 3), (3, 0, 3)] {
        let xs = [random(&[3, 6], &mut rng), random(&[3, 2, k], &mut rng), random(&[2], &mut rng)];
        let e = check_tape(&xs, seed, |t, ids| t.conv_transpose1d(ids[0], ids[1], Some(ids[2]), stride, pad).unwrap());
        push(&format!("conv_transpose1d stride {stride} pad {pad} kernel {k}"), e);
    }
    for kind in [Activation::Silu, Activation::Relu, Activation::Identity] {
        // keep inputs away from the ReLU kink
        let x = random(&[4, 9], &mut rng).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let e = check_tape(&[x], seed, |t, ids| t.activation(ids[0], kind));
        push(&format!("activation {kind:?}"), e);
    }
    let xs = [random(&[3, 5], &mut rng), random(&[3, 5], &mut rng)];
    push("add", check_tape(&xs, seed, |t, ids| t.add(ids[0], ids[1]).unwrap()));
    let x = random(&[5, 7], &mut rng);
    push("normalize_columns", check_tape(&[x], seed, |t, ids| t.normalize_columns(ids[0], 1e-8).unwrap()));
    let xs = [random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)];
    push(
        "weighted_sum",
        check_tape(&xs, seed, |t, ids| {
            let a = t.value(ids[0]).data().iter().sum::<f64>();
            let b = t.value(ids[1]).data().iter().map(|v| v * v).sum::<f64>();
            let ga = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
            let gb = t.value(ids[1]).map(|v| 2.0 * v);
            let la = t.loss(ids[0], a, ga).unwrap();
            let lb = t.loss(ids[1], b, gb).unwrap();
            t.weighted_sum(&[(la, 0.7), (lb, -1.3)])
        }),
    );

    let mask: Vec<bool> = (0..12).map(|t| t != 4 && t < 10).collect();
    let gt = random(&[53, 12], &mut rng);
    let pred = random(&[53, 12], &mut rng);
    let face = LossLayout::face(&LossWeights::default());
    for kind in [ReconKind::L1, ReconKind::L2, ReconKind::SmoothL1] {
        let e = check_loss(&pred, |p| recon_loss(&gt, p, &mask, &face, kind).unwrap());
        push(&format!("recon loss {kind:?} (face layout)"), e);
    }
    let e = check_loss(&pred, |p| velocity_loss(&gt, p, &mask, &face).unwrap());
    push("velocity loss (face layout)", e);
    let gt_b = random(&[117, 12], &mut rng);
    let pred_b = random(&[117, 12], &mut rng);
    let body = LossLayout::body();
    let e = check_loss(&pred_b, |p| recon_loss(&gt_b, p, &mask, &body, ReconKind::L1).unwrap());
    push("recon loss L1 (body layout)", e);
    let e = check_loss(&pred_b, |p| velocity_loss(&gt_b, p, &mask, &body).unwrap());
    push("velocity loss (body layout)", e);
    let z = random(&[8, 6], &mut rng);
    let zq = random(&[8, 6], &mut rng);
    let lmask = [true, true, false, true, true, true];
    let e = check_loss(&z, |p| commitment_loss(p, &zq, &lmask, 0.02).unwrap());
    push("commitment loss", e);

    // straight-through with the offset q − z₀ frozen at the base point, so the
    // surrogate z + (q − z₀) is smooth in z
    let z0 = random(&[3, 4], &mut rng);
    let q = random(&[3, 4], &mut rng);
    let e = check_tape(std::slice::from_ref(&z0), seed, |t, ids| {
        let mut v = t.value(ids[0]).clone();
        for ((a, q), z0) in v.data_mut().iter_mut().zip(q.data()).zip(z0.data()) {
            *a += q - z0;
        }
        t.straight_through(ids[0], v).unwrap()
    });
    push("straight-through", e);
    out
}

pub fn toy_config() -> CodecConfig {
    CodecConfig {
        width: 4,
        window: 16,
        ratio: 8,
        codebook_size: 4,
        code_dim: 3,
        hidden: 6,
        kernel: 3,
        res_blocks: 1,
        ..CodecConfig::face()
    }
}

pub fn toy_objective() -> Objective {
    use nvtok_core::losses::ChannelGroup;
    let layout = LossLayout::new(
        4,
        vec![
            ChannelGroup { name: "a".into(), range: 0..3, recon_weight: 1.0, vel_weight: 1.0 },
            ChannelGroup { name: "b".into(), range: 3..4, recon_weight: 5.0, vel_weight: 5.0 },
        ],
    )
    .unwrap();
    Objective { layout, recon_weight: 1.0, vel_weight: 0.5, beta: 0.02, recon_kind: ReconKind::L1 }
}

/// Full-model gradient of the total loss against central differences, with
/// the quantization offset frozen at the base point. Returns the relative
/// error over all parameters.
pub fn toy_model_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = toy_config();
    let codec = Codec::<f64>::new(cfg, &mut rng).unwrap();
    let objective = toy_objective();
    let mask: Vec<bool> = (0..16).map(|t| t < 13).collect();
    let mut x = random(&[4, 16], &mut rng);
    for c in 0..4 {
        for t in 13..16 {
            x.data_mut()[c * 16 + t] = 0.0;
        }
    }
    let seq = nvtok_core::motion::MotionSequence::from_channel_major(
        4,
        25.0,
        x.data().iter().map(|&v| v as f32).collect(),
        mask.clone(),
    )
    .unwrap();
    let x = Tensor::from_vec(&[4, 16], seq.to_real::<f64>()).unwrap();
    let z_ref = codec.encode(&seq).unwrap();
    let quantized = quantize(&z_ref, &codec.codebook).unwrap().quantized;
    let mode = QuantMode::Frozen { quantized: &quantized, z_ref: &z_ref };
    let analytic: Vec<f64> = sample_gradients(&codec, &objective, &x, &mask, mode.clone())
        .unwrap()
        .grads
        .into_iter()
        .flat_map(Tensor::into_data)
        .collect();
    let mut probe = codec.clone();
    let numeric: Vec<f64> = numeric_grads(&codec.params.tensors, |ps| {
        probe.params.tensors.clone_from_slice(ps);
        sample_gradients(&probe, &objective, &x, &mask, mode.clone()).unwrap().total
    })
    .into_iter()
    .flatten()
    .collect();
    rel_err(&analytic, &numeric)
}
