use ps_data::{generate_toy_dataset, Query, ToySpec};
use ps_detect::GroundTruthDetector;
use ps_eval::*;

fn toy() -> ps_data::ToyDataset {
    generate_toy_dataset(&ToySpec::default()).unwrap()
}

#[test]
fn palette_embedder_with_ground_truth_boxes_searches_well() {
    let t = toy();
    let emb = PaletteEmbedder::new(t.oracle.clone());
    let det = GroundTruthDetector::default();
    let index = GalleryIndex::for_protocol(&t.dataset, &t.dataset.protocol, &det, &emb).unwrap();
    let report = evaluate(&t.dataset, &t.dataset.protocol, &index, &emb, &SearchConfig::default()).unwrap();
    let s = &report.summary;
    assert!(s.n_queries > 0);
    assert!(s.map > 0.9, "mAP {}", s.map);
    assert!(s.top1 <= s.top5 && s.top5 <= s.top10);
}

#[test]
fn single_frame_gallery_with_only_the_query_person() {
    let t = toy();
    let q = &t.dataset.protocol.queries[0];
    let target = q.gallery.iter().find(|g| t.dataset.frame(g).unwrap().boxes_of(q.identity).next().is_some()).unwrap();
    let mut ds = t.dataset.clone();
    let frame = ds.frames.iter_mut().find(|f| f.id() == target).unwrap();
    frame.ground_truth.retain(|(_, l)| *l == q.identity);
    let single = Query { gallery: vec![target.clone()], ..q.clone() };
    let emb = PaletteEmbedder::new(t.oracle.clone());
    let det = GroundTruthDetector::default();
    let index = GalleryIndex::build([ds.frame(target).unwrap()], &det, &emb).unwrap();
    let r = search(&single, &ds, &index, &emb, &SearchConfig::default()).unwrap();
    assert_eq!(average_precision(&r).unwrap(), 1.0);
}

#[test]
fn gallery_without_the_identity_is_unevaluable() {
    let t = toy();
    let q = t.dataset.protocol.queries[0].clone();
    let others: Vec<String> = t.dataset.test_frame_ids().into_iter().filter(|f| *f != q.frame_id && t.dataset.frame(f).unwrap().boxes_of(q.identity).next().is_none()).map(str::to_string).collect();
    assert!(!others.is_empty());
    let q = Query { gallery: others, ..q };
    let emb = PaletteEmbedder::new(t.oracle.clone());
    let det = GroundTruthDetector::default();
    let index = GalleryIndex::build(q.gallery.iter().map(|g| t.dataset.frame(g).unwrap()), &det, &emb).unwrap();
    assert!(matches!(search(&q, &t.dataset, &index, &emb, &SearchConfig::default()), Err(EvalError::Unevaluable(_))));
    let protocol = ps_data::SearchProtocol { queries: vec![q], gallery_size: 1 };
    let report = evaluate(&t.dataset, &protocol, &index, &emb, &SearchConfig::default()).unwrap();
    assert_eq!((report.summary.n_queries, report.summary.n_unevaluable), (0, 1));
    assert!(report.summary.mostly_unevaluable());
}

#[test]
fn gallery_sweep_shape_and_determinism() {
    let spec = ToySpec { n_frames: 80, test_frames: 40, ..ToySpec::default() };
    let t = generate_toy_dataset(&spec).unwrap();
    let emb = PaletteEmbedder::new(t.oracle.clone());
    let det = GroundTruthDetector::default();
    let frames: Vec<_> = t.dataset.test_frame_ids().into_iter().map(|f| t.dataset.frame(f).unwrap()).collect();
    let index = GalleryIndex::build(frames, &det, &emb).unwrap();
    let cfg = SearchConfig::default();
    let a = gallery_sweep(&t.dataset, &index, &emb, &cfg, &[5, 10, 20], 8, 2, 7).unwrap();
    let b = gallery_sweep(&t.dataset, &index, &emb, &cfg, &[5, 10, 20], 8, 2, 7).unwrap();
    assert_eq!(a.rows.len(), 6);
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.to_csv().starts_with(CSV_HEADER));
    let parsed = SweepReport::rows_from_csv(&a.to_csv()).unwrap();
    assert_eq!(parsed.len(), 6);
    assert!(parsed.iter().all(|(axis, r)| axis == "gallery_size" && (0.0..=1.0).contains(&r.summary.map)));
}

#[test]
fn lambda_grid_has_nine_values_and_rejects_bad_ones() {
    let grid = SweepAxis::lambda_grid();
    assert_eq!(grid.len(), 9);
    let r = SweepReport::run(SweepAxis::Lambda, &grid, 2, 0, |v, _, _| Ok(EvalSummary { map: v, top1: v, top5: v, top10: v, n_queries: 1, n_unevaluable: 0 })).unwrap();
    assert_eq!(r.rows.len(), 18);
    assert_eq!(r.argmax(), Some(1.0));
    assert!(SweepReport::run(SweepAxis::Lambda, &[1.5], 1, 0, |_, _, _| unreachable!()).is_err());
    assert!(SweepReport::run(SweepAxis::GallerySize, &[2.5], 1, 0, |_, _, _| unreachable!()).is_err());
}
