//! PQ and IoU metrics against the exhaustive-pair matcher and hand arithmetic.

mod common;

use std::collections::BTreeMap;

use common::{build_map, metric_table, perturb, random_panoptic};
use panfpn::metrics::{compute_miou, compute_pq, pq_match, ConfusionMatrix, Evaluator, PqStats};
use panfpn::oracle::pq_exhaustive;
use panfpn::Rng;

#[test]
fn agrees_with_exhaustive_pair_matcher() {
    let mut rng = Rng::new(41);
    let mut matched = 0;
    for _ in 0..1000 {
        let (gt, info) = random_panoptic(&mut rng, 16, 16);
        let pred = perturb(&mut rng, &gt, &info);
        let stats = pq_match(&pred, &gt).unwrap();
        let oracle = pq_exhaustive(&pred, &gt);
        let present = stats.per_category.values().filter(|s| s.is_present()).count();
        assert_eq!(present, oracle.len());
        for (c, &(iou, tp, fp, fn_)) in &oracle {
            let s = stats.get(*c);
            assert_eq!((s.tp, s.fp, s.fn_), (tp, fp, fn_), "category {c}");
            assert!((s.iou_sum - iou).abs() <= 1e-12);
            matched += tp;
        }
    }
    assert!(matched > 500, "generator produced too few matches: {matched}");
}

#[test]
fn perfect_prediction_scores_exactly_100() {
    let mut rng = Rng::new(42);
    for _ in 0..100 {
        let (gt, _) = random_panoptic(&mut rng, 12, 12);
        if gt.segments().values().all(|s| s.crowd) {
            continue;
        }
        let pred = gt.relabel(|i| i * 7 + 2).unwrap();
        let r = compute_pq(&pq_match(&pred, &gt).unwrap(), &metric_table()).unwrap();
        assert_eq!(r.pq, 100.0);
    }
}

#[test]
fn sq_times_rq_equals_pq() {
    let mut rng = Rng::new(43);
    for _ in 0..500 {
        let (gt, info) = random_panoptic(&mut rng, 16, 16);
        let pred = perturb(&mut rng, &gt, &info);
        for s in pq_match(&pred, &gt).unwrap().per_category.values() {
            assert!((s.sq() * s.rq() - s.pq()).abs() <= 1e-9);
            assert!(s.iou_sum <= s.tp as f64 + 1e-12);
            assert!((0.0..=1.0).contains(&s.pq()));
        }
    }
}

#[test]
fn relabelling_and_image_order_do_not_matter() {
    let mut rng = Rng::new(44);
    let table = metric_table();
    let pairs: Vec<_> = (0..20)
        .map(|_| {
            let (gt, info) = random_panoptic(&mut rng, 10, 10);
            let pred = perturb(&mut rng, &gt, &info);
            (pred, gt)
        })
        .collect();
    let mut forward = Evaluator::new(&table);
    let mut backward = Evaluator::new(&table);
    let mut renamed = Evaluator::new(&table);
    for (p, g) in &pairs {
        forward.add(p, g, &table).unwrap();
        renamed
            .add(&p.relabel(|i| i + 1000).unwrap(), &g.relabel(|i| 5000 - i).unwrap(), &table)
            .unwrap();
    }
    for (p, g) in pairs.iter().rev() {
        backward.add(p, g, &table).unwrap();
    }
    let a = forward.report(&table).unwrap();
    let b = backward.report(&table).unwrap();
    let c = renamed.report(&table).unwrap();
    assert!((a.pq - b.pq).abs() < 1e-9 && (a.pq - c.pq).abs() < 1e-9);
    assert_eq!(a.miou, c.miou);
    let mut halves = Evaluator::new(&table);
    let mut second = Evaluator::new(&table);
    for (i, (p, g)) in pairs.iter().enumerate() {
        if i < 10 { &mut halves } else { &mut second }.add(p, g, &table).unwrap();
    }
    halves.merge(&second).unwrap();
    assert!((halves.report(&table).unwrap().pq - a.pq).abs() < 1e-9);
}

#[test]
fn hand_computed_two_image_scenario() {
    let table = metric_table();
    let info: BTreeMap<u32, (u32, bool)> = [
        (1, (1, false)),
        (2, (3, false)),
        (5, (1, false)),
        (6, (3, false)),
        (7, (1, false)),
        (8, (3, false)),
        (9, (4, false)),
    ]
    .into();
    let gt1 = build_map(1, 8, vec![1, 1, 1, 1, 2, 2, 2, 2], &info);
    let pr1 = build_map(1, 8, vec![5, 5, 5, 0, 6, 6, 6, 6], &info);
    let gt2 = build_map(1, 8, vec![1, 1, 0, 0, 9, 9, 9, 9], &info);
    let pr2 = build_map(1, 8, vec![7, 7, 7, 7, 8, 8, 0, 0], &info);
    let mut stats = PqStats::default();
    stats.merge(&pq_match(&pr1, &gt1).unwrap());
    stats.merge(&pq_match(&pr2, &gt2).unwrap());
    // car: IoU 3/4 and 2/2 (void removed); sky: 1 TP + 1 FP; road: 1 FN
    let r = compute_pq(&stats, &table).unwrap();
    assert!((r.pq_th.unwrap() - 87.5).abs() < 1e-6);
    assert!((r.pq_st.unwrap() - 100.0 / 3.0).abs() < 1e-6);
    assert!((r.pq - (87.5 + 200.0 / 3.0) / 3.0).abs() < 1e-6);
}

#[test]
fn confusion_arithmetic_matches_loops() {
    let mut rng = Rng::new(45);
    for _ in 0..200 {
        let gt: Vec<u32> = (0..100).map(|_| if rng.chance(0.1) { 255 } else { rng.below(3) as u32 }).collect();
        let pred: Vec<u32> = (0..100).map(|_| rng.below(3) as u32).collect();
        let mut cm = ConfusionMatrix::new(3);
        cm.add_labels(&pred, &gt, 255).unwrap();
        let r = compute_miou(&cm).unwrap();
        let valid: Vec<usize> = (0..100).filter(|&i| gt[i] != 255).collect();
        let (mut sum, mut n, mut fiou) = (0.0, 0, 0.0);
        for c in 0..3u32 {
            let tp = valid.iter().filter(|&&i| gt[i] == c && pred[i] == c).count() as f64;
            let g = valid.iter().filter(|&&i| gt[i] == c).count() as f64;
            let p = valid.iter().filter(|&&i| pred[i] == c).count() as f64;
            if g == 0.0 {
                assert_eq!(r.per_class[c as usize], None);
                continue;
            }
            let iou = tp / (g + p - tp);
            assert_eq!(r.per_class[c as usize], Some(100.0 * iou));
            sum += iou;
            n += 1;
            fiou += g / valid.len() as f64 * iou;
        }
        assert_eq!(r.miou, 100.0 * sum / n as f64);
        assert!((r.fiou - 100.0 * fiou).abs() < 1e-12);
        assert_eq!(cm.total(), valid.len() as u64);
    }
}
