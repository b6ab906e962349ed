use std::collections::HashMap;

use proptest::prelude::*;
use ps_core::{BoundingBox, Detection};
use ps_eval::{average_precision, cmc_top_k, mean_ap, Hit, RankedResult};

/// A random gallery: frames with some ground-truth boxes of the query
/// identity, hits that either sit exactly on a ground-truth box or far away.
#[derive(Debug, Clone)]
struct Instance {
    hits: Vec<Hit>,
    truth: HashMap<String, Vec<BoundingBox<f32>>>,
}

fn gt_box(slot: usize) -> BoundingBox<f32> {
    let x = slot as f32 * 40.0;
    BoundingBox::new(x, 0.0, x + 20.0, 40.0).unwrap()
}

fn instance() -> impl Strategy<Value = Instance> {
    let frame = (0usize..3, prop::collection::vec((0usize..4, any::<bool>(), 0u8..5, 0u8..4), 0..8));
    prop::collection::vec(frame, 1..5).prop_map(|frames| {
        let mut hits = Vec::new();
        let mut truth: HashMap<String, Vec<BoundingBox<f32>>> = HashMap::new();
        for (fi, (n_gt, dets)) in frames.into_iter().enumerate() {
            let id = format!("f{fi:02}");
            if n_gt > 0 {
                truth.insert(id.clone(), (0..n_gt).map(gt_box).collect());
            }
            for (slot, on_target, sim, score) in dets {
                let bbox = if on_target { gt_box(slot) } else { BoundingBox::new(500.0, 0.0, 520.0, 40.0).unwrap() };
                let detection = Detection::new(bbox, 0.25 * score as f32 + 0.1).unwrap();
                hits.push(Hit { frame_id: id.clone(), detection, similarity: sim as f64 / 4.0 });
            }
        }
        Instance { hits, truth }
    })
}

/// Sorts by the documented key and claims boxes by exhaustive scan.
fn oracle_flags(inst: &Instance) -> (Vec<bool>, usize) {
    let mut hits = inst.hits.clone();
    hits.sort_by(|a, b| {
        let ka = (-a.similarity, -a.detection.score as f64, a.frame_id.clone());
        let kb = (-b.similarity, -b.detection.score as f64, b.frame_id.clone());
        ka.partial_cmp(&kb).unwrap()
    });
    let mut used: Vec<(String, usize)> = Vec::new();
    let mut flags = Vec::new();
    for h in &hits {
        let mut hit = false;
        if let Some(boxes) = inst.truth.get(&h.frame_id) {
            for (i, b) in boxes.iter().enumerate() {
                if *b == h.detection.bbox && !used.contains(&(h.frame_id.clone(), i)) {
                    used.push((h.frame_id.clone(), i));
                    hit = true;
                    break;
                }
            }
        }
        flags.push(hit);
    }
    (flags, inst.truth.values().map(Vec::len).sum())
}

fn oracle_ap(flags: &[bool], n_gt: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..flags.len() {
        if flags[k] {
            let correct = flags[..=k].iter().filter(|&&f| f).count();
            s += correct as f64 / (k + 1) as f64;
        }
    }
    s / n_gt as f64
}

proptest! {
    #[test]
    fn ap_matches_oracle(inst in instance()) {
        let (flags, n_gt) = oracle_flags(&inst);
        let r = RankedResult::rank(inst.hits.clone(), &inst.truth, 0.5).unwrap();
        prop_assert_eq!(r.rel(), flags.as_slice());
        if n_gt == 0 {
            prop_assert!(average_precision(&r).is_err());
        } else {
            let ap = average_precision(&r).unwrap();
            prop_assert!((ap - oracle_ap(&flags, n_gt)).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }

    #[test]
    fn mean_and_cmc_match_oracle(insts in prop::collection::vec(instance(), 1..10), k in 1usize..6) {
        let insts: Vec<Instance> = insts.into_iter().filter(|i| !i.truth.is_empty()).collect();
        prop_assume!(!insts.is_empty());
        let ranked: Vec<RankedResult> = insts.iter().map(|i| RankedResult::rank(i.hits.clone(), &i.truth, 0.5).unwrap()).collect();
        let oracle: Vec<(Vec<bool>, usize)> = insts.iter().map(oracle_flags).collect();
        let want_map = oracle.iter().map(|(f, n)| oracle_ap(f, *n)).sum::<f64>() / oracle.len() as f64;
        prop_assert!((mean_ap(&ranked).unwrap() - want_map).abs() < 1e-9);
        let want_cmc = oracle.iter().filter(|(f, _)| f.iter().take(k).any(|&x| x)).count() as f64 / oracle.len() as f64;
        prop_assert_eq!(cmc_top_k(&ranked, k), want_cmc);
    }

    #[test]
    fn cmc_is_monotone_in_k(insts in prop::collection::vec(instance(), 1..8)) {
        let ranked: Vec<RankedResult> = insts.iter().map(|i| RankedResult::rank(i.hits.clone(), &i.truth, 0.5).unwrap()).collect();
        let mut prev = 0.0;
        for k in 1..10 {
            let c = cmc_top_k(&ranked, k);
            prop_assert!(c >= prev);
            prev = c;
        }
    }
}
