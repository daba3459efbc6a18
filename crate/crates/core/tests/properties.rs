use nvtok_core::ingest::{align_speaker, resize_pad, utterance_frames};
use nvtok_core::metrics::{lvd, vmse, VertexMap};
use nvtok_core::motion::{MotionSequence, WindowSpec};
use nvtok_core::quantizer::Codebook;
use nvtok_core::sequence::{
    build_interleaved, parse_chat, render_chat, InterleavedSequence, Role, TimedWord, Token, TokenClass, TokenKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seq_strategy(width: usize) -> impl Strategy<Value = MotionSequence> {
    (1usize..40, any::<u64>()).prop_map(move |(len, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.8)).collect();
        let mut data = vec![0.0f32; width * len];
        for c in 0..width {
            for t in 0..len {
                if mask[t] {
                    data[c * len + t] = rng.gen_range(-2.0..2.0);
                }
            }
        }
        MotionSequence::from_channel_major(width, 25.0, data, mask).unwrap()
    })
}

fn word_strategy() -> impl Strategy<Value = String> {
    "[A-Za-z0-9.,!?'<>_-]{1,9}".prop_filter("no code tags", |w| !w.contains("<FACE_") && !w.contains("<BODY_"))
}

fn token_strategy() -> impl Strategy<Value = TokenKind> {
    prop_oneof![
        word_strategy().prop_map(TokenKind::Word),
        (0u32..512).prop_map(TokenKind::Face),
        (0u32..512).prop_map(TokenKind::Body),
    ]
}

proptest! {
    #[test]
    fn pad_or_truncate_is_idempotent(seq in seq_strategy(3), window in 1usize..48) {
        let spec = WindowSpec::new(window, 3).unwrap();
        let once = seq.pad_or_truncate(spec).unwrap();
        prop_assert_eq!(once.len(), window);
        let head_valid = seq.mask().iter().take(window).filter(|m| **m).count();
        prop_assert_eq!(once.valid_frames(), head_valid);
        prop_assert_eq!(once.pad_or_truncate(spec).unwrap(), once);
    }

    #[test]
    fn render_then_parse_is_identity(
        kinds in prop::collection::vec(token_strategy(), 0..40),
        assistant in any::<bool>(),
        name in "[a-zA-Z0-9_-]{0,12}",
    ) {
        let seq = InterleavedSequence {
            role: if assistant { Role::Assistant } else { Role::User },
            name,
            tokens: kinds.into_iter().map(Token::untimed).collect(),
        };
        let back = parse_chat(&render_chat(&seq), Some(512)).unwrap();
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn reconstruction_metrics_are_symmetric(a in seq_strategy(4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = a.len();
        let data: Vec<f32> = (0..4 * len)
            .map(|i| if a.mask()[i % len] { rng.gen_range(-2.0..2.0) } else { 0.0 })
            .collect();
        let b = MotionSequence::from_channel_major(4, 25.0, data, a.mask().to_vec()).unwrap();
        let m = VertexMap::Identity;
        prop_assert_eq!(vmse(&a, &b, &m).unwrap(), vmse(&b, &a, &m).unwrap());
        prop_assert_eq!(lvd(&a, &b, &m).unwrap(), lvd(&b, &a, &m).unwrap());
    }

    #[test]
    fn l1_and_l2_frame_norms_obey_cauchy_schwarz(x in prop::collection::vec(-3.0f32..3.0, 1..60)) {
        let d = x.len();
        let zero = MotionSequence::from_frames(d, 25.0, &[vec![0.0; d]]).unwrap();
        let one = MotionSequence::from_frames(d, 25.0, &[x]).unwrap();
        let (l1, l2sq) = (lvd(&zero, &one, &VertexMap::Identity).unwrap(), vmse(&zero, &one, &VertexMap::Identity).unwrap());
        prop_assert!(l1 * l1 <= d as f64 * l2sq * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn codebook_rows_stay_unit_norm(seed in any::<u64>(), k in 2usize..10, c in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cb = Codebook::<f64>::random(k, c, &mut rng).unwrap();
        for _ in 0..20 {
            let n = rng.gen_range(0..12);
            let z: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            cb.ema_update(&z, &a, rng.gen_range(0.01..0.999)).unwrap();
            for i in 0..k {
                let norm: f64 = cb.entry(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn frame_start_is_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0, fps in prop::sample::select(vec![24.0, 25.0, 30.0])) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s_lo = utterance_frames(lo, 200.0, fps, None).unwrap().start;
        let s_hi = utterance_frames(hi, 200.0, fps, None).unwrap().start;
        prop_assert!(s_lo <= s_hi);
    }

    #[test]
    fn resize_keeps_aspect_within_a_pixel(w in 1usize..2000, h in 1usize..2000, side in prop::sample::select(vec![100usize, 224, 256])) {
        let r = resize_pad(w, h, side).unwrap();
        prop_assert_eq!(r.width.max(r.height), side);
        let (short, long) = (w.min(h) as f64, w.max(h) as f64);
        let short_r = r.width.min(r.height) as f64;
        let bound = 1.0 / short_r.max(1.0);
        prop_assert!((short_r / side as f64 - short / long).abs() <= bound);
    }

    #[test]
    fn constant_embedding_always_takes_first_candidate(counts in prop::collection::vec(1usize..4, 0..30)) {
        let frames: Vec<Vec<u8>> = counts.iter().map(|&n| vec![0u8; n]).collect();
        let r = align_speaker(&frames, |_| Ok(vec![1.0, 2.0, 3.0]));
        prop_assert!(r.chosen.iter().all(|c| *c == Some(0)));
    }

    #[test]
    fn interleaving_counts_and_shift_invariance(
        n_words in 0usize..8,
        tau in 1usize..10,
        shift_quarters in -8i32..40,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // fps 16, q 8: one code per 0.5 s; word edges on a 0.25 s grid
        let mut t = 0.0;
        let mut words = Vec::new();
        for i in 0..n_words {
            t += rng.gen_range(0..3) as f64 * 0.25;
            let len = rng.gen_range(1..4) as f64 * 0.25;
            words.push(TimedWord::new(format!("w{i}"), t, t + len));
            t += len;
        }
        let face: Vec<usize> = (0..tau).map(|_| rng.gen_range(0..512)).collect();
        let body: Vec<usize> = (0..tau).map(|_| rng.gen_range(0..512)).collect();
        let base = build_interleaved(&words, &face, &body, 16.0, 8, 0.0).unwrap();
        prop_assert_eq!(base.count(TokenClass::Face), tau);
        prop_assert_eq!(base.count(TokenClass::Body), tau);
        prop_assert_eq!(base.count(TokenClass::Text), n_words);
        let times: Vec<f64> = base.tokens.iter().map(|t| t.time.unwrap()).collect();
        prop_assert!(times.windows(2).all(|p| p[0] <= p[1]));
        for (a, b) in base.tokens.iter().zip(base.tokens.iter().skip(1)) {
            if a.time == b.time && a.kind.class() == TokenClass::Body && b.kind.class() == TokenClass::Face {
                prop_assert!(false, "body before face at equal time");
            }
        }

        let dt = shift_quarters as f64 * 0.25;
        let moved: Vec<TimedWord> = words.iter().map(|w| TimedWord::new(w.word.clone(), w.start + dt + 10.0, w.end + dt + 10.0)).collect();
        let shifted = build_interleaved(&moved, &face, &body, 16.0, 8, dt + 10.0).unwrap();
        let k = |s: &InterleavedSequence| s.tokens.iter().map(|t| t.kind.clone()).collect::<Vec<_>>();
        prop_assert_eq!(k(&shifted), k(&base));
    }
}
