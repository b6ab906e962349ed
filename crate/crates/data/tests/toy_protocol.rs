use std::collections::BTreeSet;

use ps_core::{crop_and_resize, IdentityLabel};
use ps_data::{generate_toy_dataset, sample_protocol, sample_training_pairs, PairSampler, ToySpec};

#[test]
fn every_query_gallery_excludes_query_frame_and_has_a_match() {
    let spec = ToySpec { n_identities: 20, n_frames: 80, test_frames: 60, gallery_size: 30, n_queries: 40, ..ToySpec::default() };
    let toy = generate_toy_dataset(&spec).unwrap();
    let ds = &toy.dataset;
    assert_eq!(ds.protocol.queries.len(), 40);
    for q in &ds.protocol.queries {
        assert_eq!(q.gallery.len(), 30);
        assert!(!q.gallery.contains(&q.frame_id));
        let distinct: BTreeSet<_> = q.gallery.iter().collect();
        assert_eq!(distinct.len(), 30);
        assert!(q.gallery.iter().any(|g| ds.frame(g).unwrap().boxes_of(q.identity).next().is_some()));
    }
    assert_eq!(ds.train_frames().len(), 20);
}

#[test]
fn protocol_resampling_depends_only_on_seed() {
    let spec = ToySpec { n_identities: 10, n_frames: 50, test_frames: 40, gallery_size: 10, n_queries: 10, ..ToySpec::default() };
    let toy = generate_toy_dataset(&spec).unwrap();
    let ids: Vec<String> = toy.dataset.held_out.iter().cloned().collect();
    let a = sample_protocol(&toy.dataset.frames, &ids, 20, 10, 1).unwrap();
    let b = sample_protocol(&toy.dataset.frames, &ids, 20, 10, 1).unwrap();
    let c = sample_protocol(&toy.dataset.frames, &ids, 20, 10, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn two_identity_pairs_alternate() {
    let spec = ToySpec { n_identities: 2, persons_per_frame: 2, test_frames: 0, ..ToySpec::default() };
    let toy = generate_toy_dataset(&spec).unwrap();
    let crops: Vec<_> = toy.dataset.frames.iter().flat_map(|f| f.labeled_crops(64, 32).unwrap()).collect();
    for (a, b) in sample_training_pairs(&crops, 4, 7).unwrap() {
        let pair = (crops[a].identity, crops[b].identity);
        assert!(pair == (IdentityLabel::Labeled(1), IdentityLabel::Labeled(2)) || pair == (IdentityLabel::Labeled(2), IdentityLabel::Labeled(1)));
    }
}

#[test]
fn epoch_covers_all_ten_identities_as_appearance() {
    let spec = ToySpec { n_identities: 10, n_frames: 30, test_frames: 0, ..ToySpec::default() };
    let toy = generate_toy_dataset(&spec).unwrap();
    let crops: Vec<_> = toy.dataset.frames.iter().flat_map(|f| f.labeled_crops(64, 32).unwrap()).collect();
    let mut s = PairSampler::from_crops(&crops, 11).unwrap();
    let pairs = s.batch(s.epoch_len());
    let providers: BTreeSet<_> = pairs.iter().map(|&(a, _)| crops[a].identity).collect();
    assert_eq!(providers.len(), 10);
}

#[test]
fn oracle_is_exact_on_every_clean_crop() {
    let spec = ToySpec { n_identities: 30, n_frames: 100, palette_dim: 10, ..ToySpec::default() };
    let toy = generate_toy_dataset(&spec).unwrap();
    for f in &toy.dataset.frames {
        for (b, l) in &f.ground_truth {
            let crop = crop_and_resize(&f.scene.pixels, b, 64, 32).unwrap();
            assert_eq!(toy.oracle.classify_appearance(&crop), *l);
        }
    }
}
