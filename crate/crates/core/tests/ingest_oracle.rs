mod support;

use nvtok_core::ingest::{resize_pad, utterance_frames};
use support::suites::{harm_boundary_holds, ingest_grid_mismatches};

#[test]
fn formulas_match_integer_evaluation_on_grid() {
    let bad = ingest_grid_mismatches();
    assert!(bad.is_empty(), "{} mismatches, first: {:?}", bad.len(), bad.first());
}

#[test]
fn harmful_limit_is_inclusive() {
    assert!(harm_boundary_holds());
}

#[test]
fn placed_image_is_centred() {
    let r = resize_pad(4, 2, 6).unwrap();
    assert_eq!((r.width, r.height, r.offset_w, r.offset_h), (6, 3, 0, 1));
    let canvas = r.place(&[1u8; 18]).unwrap();
    let rows: Vec<u8> = canvas.chunks(6).map(|row| row.iter().sum()).collect();
    assert_eq!(rows, vec![0, 6, 6, 6, 0, 0]);
    assert_eq!(r.source_of(1, 2), Some((0, 2)));
    assert_eq!(r.source_of(0, 0), None);
}

#[test]
fn bad_times_are_rejected() {
    assert!(utterance_frames(2.0, 1.0, 25.0, None).is_err());
    assert!(utterance_frames(-0.1, 1.0, 25.0, None).is_err());
    assert!(utterance_frames(0.0, 1.0, 0.0, None).is_err());
    assert!(utterance_frames(0.0, 1.0, 25.0, Some(0)).is_err());
}
