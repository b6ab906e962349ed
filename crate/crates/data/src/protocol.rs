//! Query/gallery sampling over a set of test frames.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::types::{AnnotatedFrame, Query, SearchProtocol};
use crate::{DataError, Result};

/// Samples `n_queries` labeled test persons and, for each, a gallery of
/// `gallery_size` other test frames. The gallery holds every frame in which the
/// query identity reappears (up to the gallery size), topped up with random
/// distractor frames. Persons whose identity never reappears cannot be queries.
pub fn sample_protocol(
    frames: &[AnnotatedFrame],
    test_ids: &[String],
    gallery_size: usize,
    n_queries: usize,
    seed: u64,
) -> Result<SearchProtocol> {
    if gallery_size == 0 {
        return Err(DataError::Protocol("gallery_size must be positive".into()));
    }
    let wanted: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
    let test: Vec<&AnnotatedFrame> = frames.iter().filter(|f| wanted.contains(f.id())).collect();
    if test.len() != wanted.len() {
        return Err(DataError::Protocol("test frame list names unknown frames".into()));
    }
    if test.len() < gallery_size + 1 {
        return Err(DataError::Protocol(format!("{} test frames cannot supply galleries of {gallery_size}", test.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut candidates = Vec::new();
    for (fi, f) in test.iter().enumerate() {
        for (b, l) in f.ground_truth.iter().filter(|(_, l)| l.is_labeled()) {
            let reappears = test.iter().enumerate().any(|(gi, g)| gi != fi && g.boxes_of(*l).next().is_some());
            if reappears {
                candidates.push((fi, *b, *l));
            }
        }
    }
    if candidates.is_empty() {
        return Err(DataError::Protocol("no test identity appears in two frames".into()));
    }
    candidates.shuffle(&mut rng);
    candidates.truncate(n_queries);

    let mut queries = Vec::with_capacity(candidates.len());
    for (fi, bbox, identity) in candidates {
        let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
            (0..test.len()).filter(|&g| g != fi).partition(|&g| test[g].boxes_of(identity).next().is_some());
        pos.shuffle(&mut rng);
        pos.truncate(gallery_size);
        neg.shuffle(&mut rng);
        neg.truncate(gallery_size - pos.len());
        let mut gallery: Vec<String> = pos.iter().chain(&neg).map(|&g| test[g].id().to_string()).collect();
        if gallery.len() < gallery_size {
            return Err(DataError::Protocol(format!("query in {} ran out of gallery frames", test[fi].id())));
        }
        gallery.sort();
        queries.push(Query { frame_id: test[fi].id().to_string(), identity, bbox, gallery });
    }
    Ok(SearchProtocol { queries, gallery_size })
}
