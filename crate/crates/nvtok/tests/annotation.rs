use nvtok::annotation::{parse_annotation, read_annotation, Annotation, TOP_LEVEL_KEYS};
use nvtok::Error;
use nvtok_core::motion::{StreamKind, BODY_WIDTH, FACE_WIDTH};
use serde_json::Value;
use std::path::PathBuf;

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(name)
}

fn fixture() -> Annotation {
    read_annotation(&fixture_path("fixtures/annotation.json")).unwrap()
}

fn fixture_value() -> Value {
    serde_json::from_slice(&std::fs::read(fixture_path("fixtures/annotation.json")).unwrap()).unwrap()
}

fn parse_value(v: &Value) -> nvtok::Result<Annotation> {
    parse_annotation(&serde_json::to_vec(v).unwrap())
}

fn assert_validation(r: nvtok::Result<Annotation>, needle: &str) {
    match r {
        Err(Error::Core(nvtok_core::Error::Validation(m))) => assert!(m.contains(needle), "{m}"),
        other => panic!("expected validation error mentioning {needle:?}, got {other:?}"),
    }
}

#[test]
fn fixture_has_every_top_level_key() {
    let v = fixture_value();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 10);
    for k in TOP_LEVEL_KEYS {
        assert!(keys.contains(&k), "{k}");
    }
    let a = fixture();
    assert_eq!(a.conversation.len(), 2);
    assert_eq!(a.face_layout().unwrap().unwrap().width(), 153);
}

#[test]
fn parse_serialize_parse_is_identity() {
    let a = fixture();
    assert_eq!(parse_annotation(a.to_json().as_bytes()).unwrap(), a);
}

#[test]
fn each_missing_key_is_named() {
    for key in TOP_LEVEL_KEYS {
        let mut v = fixture_value();
        v.as_object_mut().unwrap().remove(key);
        match parse_value(&v) {
            Err(Error::Schema(m)) => assert!(m.contains(key), "{m}"),
            other => panic!("{key}: {other:?}"),
        }
    }
    let mut v = fixture_value();
    v["conversation"][0].as_object_mut().unwrap().remove("speaker");
    match parse_value(&v) {
        Err(Error::Schema(m)) => assert!(m.contains("speaker"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn harmful_ids_must_not_appear_in_conversation() {
    let mut v = fixture_value();
    v["harmful_utterance_id"] = serde_json::json!(["crXEd-NEsS8_000_10"]);
    assert_validation(parse_value(&v), "harmful");
}

#[test]
fn empty_conversation_is_valid() {
    let mut v = fixture_value();
    v["conversation"] = serde_json::json!([]);
    v["facial_expression"] = serde_json::json!([]);
    v["body_language"] = serde_json::json!([]);
    let a = parse_value(&v).unwrap();
    assert!(a.conversation.is_empty());
    assert_eq!(a.face_layout().unwrap(), None);
}

#[test]
fn feature_width_is_checked() {
    let mut v = fixture_value();
    v["body_language"][0]["features"][0].as_array_mut().unwrap().pop();
    assert_validation(parse_value(&v), "width 178");
    let mut v = fixture_value();
    v["facial_expression"][0]["features"][0].as_array_mut().unwrap().push(0.0.into());
    assert_validation(parse_value(&v), "mix raw widths");
}

#[test]
fn words_stay_inside_their_utterance() {
    let mut v = fixture_value();
    v["conversation"][1]["words"][0]["t_start"] = 1.0.into();
    assert_validation(parse_value(&v), "outside utterance");
}

#[test]
fn boxes_are_ordered() {
    let mut v = fixture_value();
    v["speaker_bbox"][0]["bbox"] = serde_json::json!([10.0, 10.0, 5.0, 20.0]);
    assert_validation(parse_value(&v), "not ordered");
}

#[test]
fn schema_file_requires_the_same_keys() {
    let schema: Value =
        serde_json::from_slice(&std::fs::read(fixture_path("schema/annotation.schema.json")).unwrap()).unwrap();
    let required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|k| k.as_str().unwrap()).collect();
    assert_eq!(required, TOP_LEVEL_KEYS);
}

#[test]
fn utterance_motion_is_projected() {
    let a = fixture();
    let id = &a.conversation[0].id;
    let face = a.utterance_motion(id, StreamKind::Face, true).unwrap().unwrap();
    let body = a.utterance_motion(id, StreamKind::Body, false).unwrap().unwrap();
    assert_eq!((face.width(), face.len()), (FACE_WIDTH, 60));
    assert_eq!((body.width(), body.len()), (BODY_WIDTH, 60));
    assert_eq!(face.fps(), 25.0);
    // raw expression block starts at column 100 of the 153-wide row
    let raw = &a.facial_expression[0].features[0];
    let unsmoothed = a.utterance_motion(id, StreamKind::Face, false).unwrap().unwrap();
    assert_eq!(unsmoothed.frame(0)[0], raw[100]);
    assert_eq!(unsmoothed.frame(0)[50..], raw[150..153]);
    assert_eq!(a.clip_start(&a.conversation[1].id, StreamKind::Face), Some(64.0 / 25.0));
    assert_eq!(a.words(id).unwrap().len(), 12);
}
