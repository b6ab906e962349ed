use proptest::prelude::*;
use ps_core::{BoundingBox, Detection, IdentityLabel};
use ps_detect::{aidq_loss, hard_negative_count_from_scores, nms, IdentityMemory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plain_iou(a: &BoundingBox<f64>, b: &BoundingBox<f64>) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter)
}

/// A detection survives iff no higher-ranked survivor overlaps it.
fn nms_oracle(dets: &[Detection<f64>], thr: f64) -> Vec<usize> {
    let mut rank: Vec<usize> = (0..dets.len()).collect();
    rank.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    let mut kept: Vec<usize> = Vec::new();
    for &i in &rank {
        if kept.iter().all(|&j| plain_iou(&dets[i].bbox, &dets[j].bbox) < thr) {
            kept.push(i);
        }
    }
    kept
}

fn k_oracle(scores: &[f64], ratio: f64) -> usize {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let total: f64 = s.iter().sum();
    if total <= 0.0 {
        return s.len();
    }
    let gaps: Vec<f64> = (1..=s.len()).map(|k| (s[..k].iter().sum::<f64>() / total - ratio).abs()).collect();
    let min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    gaps.iter().position(|&g| g == min).unwrap() + 1
}

fn random_dets(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection<f64>> {
    (0..n)
        .map(|_| {
            let (x, y) = (rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0));
            let (w, h) = (rng.gen_range(2.0..25.0), rng.gen_range(2.0..25.0));
            Detection::new(BoundingBox::new(x, y, x + w, y + h).unwrap(), rng.gen_range(0.0..1.0)).unwrap()
        })
        .collect()
}

#[test]
fn nms_matches_oracle_on_random_boxes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let dets = random_dets(&mut rng, 20);
        let thr = rng.gen_range(0.2..0.8);
        let expected: Vec<Detection<f64>> = nms_oracle(&dets, thr).into_iter().map(|i| dets[i].clone()).collect();
        assert_eq!(nms(&dets, thr), expected);
    }
}

#[test]
fn hard_negative_count_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let n = rng.gen_range(1..30);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..1.0)).collect();
        let ratio = rng.gen_range(0.05..=1.0);
        assert_eq!(hard_negative_count_from_scores(&scores, ratio).unwrap(), k_oracle(&scores, ratio));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn nms_keeps_an_antichain(seed in any::<u64>(), thr in 0.1f64..0.9) {
        let dets = random_dets(&mut ChaCha8Rng::seed_from_u64(seed), 25);
        let kept = nms(&dets, thr);
        for i in 0..kept.len() {
            prop_assert!(i == 0 || kept[i - 1].score >= kept[i].score);
            for j in i + 1..kept.len() {
                prop_assert!(plain_iou(&kept[i].bbox, &kept[j].bbox) < thr);
            }
        }
    }

    #[test]
    fn k_is_monotone_in_ratio(scores in prop::collection::vec(0.01f64..1.0, 1..20), a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(hard_negative_count_from_scores(&scores, lo).unwrap() <= hard_negative_count_from_scores(&scores, hi).unwrap());
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn random_memory(rng: &mut ChaCha8Rng, m: usize, u: usize, d: usize) -> IdentityMemory<f64> {
    let labeled = (0..m).map(|_| unit(rng, d)).collect();
    let unlabeled = (0..u).map(|_| unit(rng, d)).collect();
    IdentityMemory::from_centers(labeled, unlabeled, 0.5, 0.5).unwrap()
}

#[test]
fn aidq_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = 1e-4;
    for _ in 0..50 {
        let mem = random_memory(&mut rng, 6, 3, 8);
        let batch: Vec<(Vec<f64>, IdentityLabel)> = (0..3).map(|_| (unit(&mut rng, 8), IdentityLabel::Labeled(rng.gen_range(1..=6)))).collect();
        let out = aidq_loss(&batch, &mem, 0.3, 0.6).unwrap();
        for s in 0..batch.len() {
            for d in 0..8 {
                let mut plus = batch.clone();
                plus[s].0[d] += eps;
                let mut minus = batch.clone();
                minus[s].0[d] -= eps;
                let (lp, lm) = (aidq_loss(&plus, &mem, 0.3, 0.6).unwrap(), aidq_loss(&minus, &mem, 0.3, 0.6).unwrap());
                if lp.ks != out.ks || lm.ks != out.ks {
                    continue; // selection boundary crossed
                }
                let fd = (lp.loss - lm.loss) / (2.0 * eps);
                let an = out.grads[s][d];
                assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-6), "fd {fd} analytic {an}");
            }
        }
    }
}

#[test]
fn moving_toward_positive_lowers_loss() {
    // Negatives live in a subspace orthogonal to the plane of motion, so their
    // similarities stay fixed while the sample rotates toward its center.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 6;
    for _ in 0..200 {
        let mut positive = vec![0.0; d];
        positive[0] = 1.0;
        let negs: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut v = unit(&mut rng, d);
                v[0] = 0.0;
                v[1] = 0.0;
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        let mut labeled = vec![positive.clone()];
        labeled.extend(negs);
        let mem = IdentityMemory::from_centers(labeled, vec![], 0.5, 0.5).unwrap();
        let theta: f64 = rng.gen_range(0.1..3.0);
        let at = |t: f64| {
            let mut x = vec![0.0; d];
            x[0] = t.cos();
            x[1] = t.sin();
            vec![(x, IdentityLabel::Labeled(1))]
        };
        let ratio = rng.gen_range(0.2..=1.0);
        let before = aidq_loss(&at(theta), &mem, 0.5, ratio).unwrap();
        let after = aidq_loss(&at(theta - 0.05), &mem, 0.5, ratio).unwrap();
        let tangent = [theta.sin(), -theta.cos()];
        let dir = before.grads[0][0] * tangent[0] + before.grads[0][1] * tangent[1];
        assert!(dir < 0.0, "directional derivative {dir}");
        assert!(after.loss < before.loss);
    }
}

#[test]
fn centers_stay_unit_norm_under_fuzzed_updates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mem = IdentityMemory::random(10, 16, 0.5, 0.5, 9);
    for _ in 0..10_000 {
        let x = unit(&mut rng, 16);
        let label = if rng.gen_bool(0.3) { IdentityLabel::Unlabeled } else { IdentityLabel::Labeled(rng.gen_range(1..=10)) };
        mem.update(&x, label).unwrap();
    }
    assert_eq!(mem.labeled.len(), 10);
    assert!(!mem.unlabeled.is_empty());
    assert!(mem.max_norm_error() < 1e-6);
}
