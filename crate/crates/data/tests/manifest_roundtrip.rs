use std::fs;
use std::path::Path;

use ps_core::IdentityLabel;
use ps_data::manifest::MANIFEST_NAME;
use ps_data::{generate_toy_dataset, load_annotations, save_annotations, DataError, ToySpec};

fn write_manifest(dir: &Path, json: &str) -> std::path::PathBuf {
    let p = dir.join(MANIFEST_NAME);
    fs::write(&p, json).unwrap();
    p
}

fn blank_png(dir: &Path, name: &str) {
    fs::create_dir_all(dir.join("images")).unwrap();
    let img = ps_core::ImageBuf::filled(3, 20, 30, 0.2f32);
    ps_data::pngio::write_png(&dir.join("images").join(name), &img).unwrap();
}

#[test]
fn save_then_load_is_identity() {
    let spec = ToySpec { n_frames: 30, test_frames: 14, gallery_size: 6, n_queries: 8, unlabeled_prob: 0.2, ..ToySpec::default() };
    let toy = generate_toy_dataset(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_annotations(&toy.dataset, dir.path()).unwrap();
    let back = load_annotations(&dir.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(back, toy.dataset);
}

#[test]
fn saving_twice_gives_identical_manifest() {
    let toy = generate_toy_dataset(&ToySpec::default()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_annotations(&toy.dataset, a.path()).unwrap();
    save_annotations(&generate_toy_dataset(&ToySpec::default()).unwrap().dataset, b.path()).unwrap();
    assert_eq!(fs::read(a.path().join(MANIFEST_NAME)).unwrap(), fs::read(b.path().join(MANIFEST_NAME)).unwrap());
}

#[test]
fn single_box_manifest() {
    let dir = tempfile::tempdir().unwrap();
    blank_png(dir.path(), "a.png");
    let p = write_manifest(
        dir.path(),
        r#"{"frames":[{"id":"a","image":"images/a.png","boxes":[{"x1":1,"y1":2,"x2":9,"y2":18,"identity":42}]}]}"#,
    );
    let ds = load_annotations(&p).unwrap();
    assert_eq!(ds.frames.len(), 1);
    assert_eq!(ds.num_identities, 1);
    assert_eq!(ds.frames[0].ground_truth[0].1, IdentityLabel::Labeled(1));
}

#[test]
fn null_identity_stays_unlabeled() {
    let dir = tempfile::tempdir().unwrap();
    blank_png(dir.path(), "a.png");
    let p = write_manifest(
        dir.path(),
        r#"{"frames":[{"id":"a","image":"images/a.png","boxes":[{"x1":1,"y1":2,"x2":9,"y2":18,"identity":null}]}]}"#,
    );
    let ds = load_annotations(&p).unwrap();
    assert_eq!(ds.frames[0].ground_truth[0].1, IdentityLabel::Unlabeled);
    assert_eq!(ds.num_identities, 0);
}

#[test]
fn labels_are_reindexed_contiguously() {
    let dir = tempfile::tempdir().unwrap();
    blank_png(dir.path(), "a.png");
    blank_png(dir.path(), "b.png");
    let p = write_manifest(
        dir.path(),
        r#"{"frames":[
            {"id":"a","image":"images/a.png","boxes":[{"x1":0,"y1":0,"x2":5,"y2":10,"identity":70},{"x1":10,"y1":0,"x2":15,"y2":10,"identity":3}]},
            {"id":"b","image":"images/b.png","boxes":[{"x1":0,"y1":0,"x2":5,"y2":10,"identity":70}]}],
          "queries":[{"frame":"a","identity":70,"box":{"x1":0,"y1":0,"x2":5,"y2":10},"gallery":["b"]}]}"#,
    );
    let ds = load_annotations(&p).unwrap();
    assert_eq!(ds.num_identities, 2);
    assert_eq!(ds.frames[0].ground_truth[0].1, IdentityLabel::Labeled(2));
    assert_eq!(ds.frames[0].ground_truth[1].1, IdentityLabel::Labeled(1));
    assert_eq!(ds.protocol.queries[0].identity, IdentityLabel::Labeled(2));
    assert_eq!(ds.train_frames().len(), 0);
}

#[test]
fn inverted_box_is_rejected_with_frame_name() {
    let dir = tempfile::tempdir().unwrap();
    blank_png(dir.path(), "a.png");
    let p = write_manifest(
        dir.path(),
        r#"{"frames":[{"id":"cam1_0001","image":"images/a.png","boxes":[{"x1":9,"y1":2,"x2":1,"y2":18,"identity":1}]}]}"#,
    );
    match load_annotations(&p) {
        Err(e @ DataError::InvalidBox { .. }) => assert!(e.to_string().contains("cam1_0001")),
        other => panic!("expected InvalidBox, got {other:?}"),
    }
}

#[test]
fn missing_image_names_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_manifest(dir.path(), r#"{"frames":[{"id":"lost","image":"images/none.png","boxes":[]}]}"#);
    match load_annotations(&p) {
        Err(e @ DataError::MissingImage { .. }) => assert!(e.to_string().contains("lost")),
        other => panic!("expected MissingImage, got {other:?}"),
    }
}

#[test]
fn duplicate_identity_in_frame_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    blank_png(dir.path(), "a.png");
    let p = write_manifest(
        dir.path(),
        r#"{"frames":[{"id":"a","image":"images/a.png","boxes":[{"x1":0,"y1":0,"x2":5,"y2":10,"identity":4},{"x1":2,"y1":0,"x2":7,"y2":10,"identity":4}]}]}"#,
    );
    assert!(matches!(load_annotations(&p), Err(DataError::DuplicateIdentity { identity: 4, .. })));
}

#[test]
fn query_identity_missing_from_gallery_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    blank_png(dir.path(), "a.png");
    blank_png(dir.path(), "b.png");
    let p = write_manifest(
        dir.path(),
        r#"{"frames":[
            {"id":"a","image":"images/a.png","boxes":[{"x1":0,"y1":0,"x2":5,"y2":10,"identity":1}]},
            {"id":"b","image":"images/b.png","boxes":[{"x1":0,"y1":0,"x2":5,"y2":10,"identity":2}]}],
          "queries":[{"frame":"a","identity":1,"box":{"x1":0,"y1":0,"x2":5,"y2":10},"gallery":["b"]}]}"#,
    );
    assert!(matches!(load_annotations(&p), Err(DataError::InvalidQuery { .. })));
}
