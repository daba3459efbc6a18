//! Randomized checks shared by the oracle tests and the acceptance run.

use super::oracles;
use nvtok_core::ingest::{harmful_filter, resize_pad, utterance_frames, UtteranceHarm};
use nvtok_core::metrics::{diversity, lvd, token_nll_ppl, variance, vmse, window_vertex_l2, TokenClass, VertexMap};
use nvtok_core::motion::MotionSequence;
use nvtok_core::quantizer::{quantize, Codebook};
use nvtok_core::sequence::{
    parse_chat, parse_content, render_chat, render_content, InterleavedSequence, Role, Token, TokenKind,
};
use nvtok_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(agreeing instances, instances)`.
pub fn quantizer_agreement(instances: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for _ in 0..instances {
        let k = rng.gen_range(2..40);
        let c = rng.gen_range(1..12);
        let tau = rng.gen_range(1..10);
        let cb = Codebook::<f64>::random(k, c, &mut rng).unwrap();
        let entries: Vec<Vec<f64>> = (0..k).map(|i| cb.entry(i).to_vec()).collect();
        let z = Tensor::from_vec(&[c, tau], (0..c * tau).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let clip = quantize(&z, &cb).unwrap();
        let ok = (0..tau).all(|t| {
            let col: Vec<f64> = (0..c).map(|j| z.data()[j * tau + t]).collect();
            let k = oracles::nearest(&entries, &col);
            clip.indices[t] == k && (0..c).all(|j| clip.quantized.data()[j * tau + t] == entries[k][j])
        });
        agree += ok as usize;
    }
    (agree, instances)
}

/// Largest deviation of entries, counts and sums from the scalar recurrence.
pub fn ema_max_error(sequences: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sequences {
        let k = rng.gen_range(2..16);
        let c = rng.gen_range(1..9);
        let mut cb = Codebook::<f64>::random(k, c, &mut rng).unwrap();
        let mut oracle = oracles::EmaState {
            entries: (0..k).map(|i| cb.entry(i).to_vec()).collect(),
            counts: cb.ema_counts().to_vec(),
            sums: (0..k).map(|i| cb.ema_sums()[i * c..(i + 1) * c].to_vec()).collect(),
        };
        for _ in 0..rng.gen_range(1..25) {
            let n = rng.gen_range(0..30);
            let latents: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
            let assign: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let decay = rng.gen_range(0.5..0.999);
            cb.ema_update(&latents.concat(), &assign, decay).unwrap();
            oracle.step(&latents, &assign, decay);
            for i in 0..k {
                worst = worst.max((cb.ema_counts()[i] - oracle.counts[i]).abs());
                for j in 0..c {
                    worst = worst.max((cb.entry(i)[j] - oracle.entries[i][j]).abs());
                    worst = worst.max((cb.ema_sums()[i * c + j] - oracle.sums[i][j]).abs());
                }
            }
        }
    }
    worst
}

fn random_frames(rng: &mut ChaCha8Rng, len: usize, d: usize) -> Vec<Vec<f32>> {
    (0..len).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

fn widen(frames: &[Vec<f32>]) -> Vec<Vec<f64>> {
    frames.iter().map(|f| f.iter().map(|&v| v as f64).collect()).collect()
}

/// Per-metric worst absolute error against the scalar loops, in the order
/// vmse, lvd, wvl2, diversity, variance.
pub fn metric_max_errors(instances: usize, seed: u64) -> [f64; 5] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 5];
    let mut bump = |i: usize, a: f64, b: f64| worst[i] = worst[i].max((a - b).abs());
    for _ in 0..instances {
        let d = rng.gen_range(1..20);
        let len = rng.gen_range(1..60);
        let g = random_frames(&mut rng, len, d);
        let p = random_frames(&mut rng, len, d);
        let gs = MotionSequence::from_frames(d, 25.0, &g).unwrap();
        let ps = MotionSequence::from_frames(d, 25.0, &p).unwrap();
        let (g64, p64) = (widen(&g), widen(&p));
        let id = VertexMap::Identity;
        bump(0, vmse(&gs, &ps, &id).unwrap(), oracles::vmse(&g64, &p64));
        bump(1, lvd(&gs, &ps, &id).unwrap(), oracles::lvd(&g64, &p64));
        let window = rng.gen_range(1..=len);
        let stride = rng.gen_range(1..8);
        bump(2, window_vertex_l2(&gs, &ps, &id, window, stride).unwrap(), oracles::wvl2(&g64, &p64, window, stride));

        let n = rng.gen_range(2..12);
        let size = rng.gen_range(1..30);
        let motions: Vec<Vec<f64>> = (0..n).map(|_| (0..size).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let (pairs, repeats, s) = (rng.gen_range(1..200), rng.gen_range(1..5), rng.gen::<u64>());
        let expect = oracles::diversity(&motions, pairs, repeats, &mut ChaCha8Rng::seed_from_u64(s));
        bump(3, diversity(&motions, pairs, repeats, s).unwrap(), expect);

        let mut channel_major = Vec::with_capacity(d * len);
        for c in 0..d {
            channel_major.extend(g64.iter().map(|f| f[c]));
        }
        bump(4, variance(&channel_major, d, len).unwrap(), oracles::variance(&g64));
    }
    worst
}

/// Identical motions have zero diversity; constant motions zero variance.
pub fn metric_exact_zeros(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..20).all(|_| {
        let size = rng.gen_range(1..40);
        let m: Vec<f64> = (0..size).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let same = vec![m; rng.gen_range(2..10)];
        let (c, t) = (rng.gen_range(1..10), rng.gen_range(1..50));
        let constant: Vec<f64> = (0..c).flat_map(|_| vec![rng.gen_range(-3.0..3.0); t]).collect();
        diversity(&same, 100, 3, rng.gen()).unwrap() == 0.0 && variance(&constant, c, t).unwrap() == 0.0
    })
}

const WORD_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,!?'-_<>";

fn random_word(rng: &mut ChaCha8Rng) -> String {
    loop {
        let n = rng.gen_range(1..10);
        let w: String = (0..n).map(|_| WORD_CHARS[rng.gen_range(0..WORD_CHARS.len())] as char).collect();
        if !w.contains("<FACE_") && !w.contains("<BODY_") {
            return w;
        }
    }
}

pub fn random_sequence(rng: &mut ChaCha8Rng) -> InterleavedSequence {
    let n = rng.gen_range(0..40);
    let tokens = (0..n)
        .map(|_| {
            Token::untimed(match rng.gen_range(0..3) {
                0 => TokenKind::Word(random_word(rng)),
                1 => TokenKind::Face(rng.gen_range(0..512)),
                _ => TokenKind::Body(rng.gen_range(0..512)),
            })
        })
        .collect();
    InterleavedSequence {
        role: if rng.gen_bool(0.5) { Role::Assistant } else { Role::User },
        name: (0..rng.gen_range(0..8)).map(|_| (b'a' + rng.gen_range(0..26)) as char).collect(),
        tokens,
    }
}

/// Number of sequences whose render/parse round trip differs.
pub fn roundtrip_failures(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|_| {
            let s = random_sequence(&mut rng);
            parse_chat(&render_chat(&s), Some(512)).ok() != Some(s)
        })
        .count()
}

pub fn literal_examples_hold() -> bool {
    use TokenKind::*;
    let w = |s: &str| Word(s.to_string());
    let cases = [
        ("I have <FACE_12><BODY_239> one.", vec![w("I"), w("have"), Face(12), Body(239), w("one.")]),
        (
            "I have <FACE_12><BODY_239><FACE_251><BODY_492> one.",
            vec![w("I"), w("have"), Face(12), Body(239), Face(251), Body(492), w("one.")],
        ),
    ];
    cases.iter().all(|(text, kinds)| {
        let toks = parse_content(text, Some(512)).unwrap();
        toks.iter().map(|t| t.kind.clone()).collect::<Vec<_>>() == *kinds && render_content(&toks) == *text
    })
}

/// Mismatches between the library and integer-arithmetic evaluations of the
/// frame-span and resize formulas.
pub fn ingest_grid_mismatches() -> Vec<String> {
    let mut bad = Vec::new();
    for fps in [24u64, 25, 30] {
        // t = a/100 s, so floor(t·fps) = floor(a·fps/100) exactly
        for a in 0..=1000u64 {
            for b in [a, a + 1, a + 37, a + 250] {
                let span = utterance_frames(a as f64 / 100.0, b as f64 / 100.0, fps as f64, None).unwrap();
                let expect = ((a * fps / 100) as usize, (b * fps / 100) as usize);
                if (span.start, span.end) != expect {
                    bad.push(format!("frames fps={fps} {a}/100..{b}/100: {span:?} vs {expect:?}"));
                }
            }
        }
        for a in [0u64, 150, 999] {
            let total = (a * fps / 100) as usize + 3;
            let span = utterance_frames(a as f64 / 100.0, 1e4, fps as f64, Some(total)).unwrap();
            if span.end != total - 1 {
                bad.push(format!("frames clamp fps={fps} a={a}: {span:?}"));
            }
        }
    }
    for side in [100u64, 224, 256] {
        for w in 1..=64u64 {
            for h in 1..=64u64 {
                let m = w.max(h);
                // round(S·x/m) with halves up: floor((2Sx + m) / 2m)
                let rw = (2 * side * w + m) / (2 * m);
                let rh = (2 * side * h + m) / (2 * m);
                let expect = (rw as usize, rh as usize, ((side - rw) / 2) as usize, ((side - rh) / 2) as usize);
                let r = resize_pad(w as usize, h as usize, side as usize).unwrap();
                let got = (r.width, r.height, r.offset_w, r.offset_h);
                if got != expect {
                    bad.push(format!("resize {w}x{h} S={side}: {got:?} vs {expect:?}"));
                }
                if (r.scale - side as f64 / m as f64).abs() > 1e-15 {
                    bad.push(format!("scale {w}x{h} S={side}"));
                }
            }
        }
    }
    bad
}

fn harm(id: &str, duration: f64, harmful: bool) -> UtteranceHarm {
    UtteranceHarm { id: id.into(), duration, harmful }
}

/// `== 180 s` keeps the video, anything above drops it.
pub fn harm_boundary_holds() -> bool {
    let exact = harmful_filter(&[harm("a", 100.0, true), harm("b", 5.0, false), harm("c", 80.0, true)]).unwrap();
    let tenths: Vec<UtteranceHarm> = (0..1800).map(|i| harm(&i.to_string(), 0.1, true)).collect();
    let decimal = harmful_filter(&tenths).unwrap();
    let over = harmful_filter(&[harm("a", 180.0 + 1e-9, true), harm("b", 1.0, false)]).unwrap();
    let split_over = harmful_filter(&[harm("a", 90.0, true), harm("b", 90.001, true)]).unwrap();
    !exact.discard_video
        && exact.kept == ["b"]
        && !decimal.discard_video
        && over.discard_video
        && over.kept.is_empty()
        && split_over.discard_video
}

/// `(|NLL − ln 512| for a uniform stream, worst |PPL − exp(NLL)|)`.
pub fn nll_errors(seed: u64) -> (f64, f64) {
    let lp = -(512f64).ln();
    let classes: Vec<TokenClass> =
        (0..999).map(|i| [TokenClass::Face, TokenClass::Body, TokenClass::Text][i % 3]).collect();
    let uniform = token_nll_ppl(&vec![lp; classes.len()], &classes).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..300);
        let l: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0..12.0)).collect();
        let c: Vec<TokenClass> =
            (0..n).map(|_| [TokenClass::Face, TokenClass::Body, TokenClass::Text][rng.gen_range(0..3)]).collect();
        let r = token_nll_ppl(&l, &c).unwrap();
        let mean = -l.iter().sum::<f64>() / n as f64;
        worst = worst.max((r.ppl - r.nll.exp()).abs() / r.ppl).max((r.nll - mean).abs());
    }
    ((uniform.nll - (512f64).ln()).abs(), worst)
}
