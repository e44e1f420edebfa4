use panfpn::train_demo::{generate_scene, train, TrainConfig, Trainer};
use panfpn::Error;

fn short(steps: usize) -> TrainConfig {
    let mut c = TrainConfig::reference();
    c.steps = steps;
    c
}

#[test]
fn scenes_are_deterministic_and_well_formed() {
    for seed in 0..30 {
        let a = generate_scene(seed, 64, 3, 16).unwrap();
        assert_eq!(a, generate_scene(seed, 64, 3, 16).unwrap());
        let other = a.other_label();
        assert!((1..=3).contains(&a.instances.len()));
        // `other` pixels are exactly the union of the instance masks
        for (i, &l) in a.semantic.labels.iter().enumerate() {
            let in_inst = a.instances.iter().any(|m| m.mask.bits()[i]);
            assert_eq!(l == other, in_inst, "seed {seed} pixel {i}");
            assert!(l <= other);
        }
        let fg = a.instances.len();
        assert_eq!(a.rois.box_targets.len(), fg);
        assert_eq!(a.rois.mask_targets.len(), fg * 49);
        assert!(a.rois.class_targets[..fg].iter().all(|&c| c == 1 || c == 2));
        assert!(a.rois.class_targets[fg..].iter().all(|&c| c == 0));
        // stuff bands are never thinner than extent / 8 rows
        let row_label: Vec<Option<u32>> = (0..64)
            .map(|y| (0..64).map(|x| a.semantic.labels[y * 64 + x]).find(|&l| l != other))
            .collect();
        let mut run = 0;
        let mut prev = None;
        for l in row_label.into_iter().flatten() {
            if Some(l) == prev {
                run += 1;
            } else {
                if prev.is_some() {
                    assert!(run >= 8, "seed {seed}: band of {run} rows");
                }
                prev = Some(l);
                run = 1;
            }
        }
    }
}

#[test]
fn single_class_scene_has_one_stuff_label() {
    let s = generate_scene(3, 64, 1, 8).unwrap();
    assert!(s.semantic.labels.iter().all(|&l| l <= 1));
    assert!(s.semantic.labels.contains(&0));
}

#[test]
fn bad_scene_arguments_are_rejected() {
    assert!(matches!(generate_scene(0, 60, 3, 16), Err(Error::InvalidArgument(_))));
    assert!(matches!(generate_scene(0, 64, 0, 16), Err(Error::InvalidArgument(_))));
}

#[test]
fn training_is_deterministic() {
    let c = short(15);
    let scene = c.scene().unwrap();
    let a = train(c, &[scene.clone()], 0).unwrap();
    let b = train(c, &[scene], 0).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.trainer.branch.store(), b.trainer.branch.store());
    assert_eq!(a.trainer.probe, b.trainer.probe);
}

#[test]
fn loss_strictly_decreases_over_first_ten_steps() {
    let c = short(11);
    let out = train(c, &[c.scene().unwrap()], 0).unwrap();
    let totals: Vec<f64> = out.curve.iter().map(|r| r.losses.total).collect();
    for w in totals.windows(2) {
        assert!(w[1] < w[0], "{totals:?}");
    }
}

#[test]
fn reference_run_reaches_miou_target() {
    let c = TrainConfig::reference();
    assert_eq!(c.steps, 500);
    let out = train(c, &[c.scene().unwrap()], 10).unwrap();
    let at = out.reached_target_at.expect("mIoU target not reached");
    assert!(at <= 500);
    assert!(out.final_miou >= c.miou_target, "{}", out.final_miou);
}

#[test]
fn zero_semantic_weight_freezes_the_branch() {
    let mut c = short(1);
    c.lambda_s = 0.0;
    let scene = c.scene().unwrap();
    let mut t = Trainer::new(c).unwrap();
    let before = t.branch.store().clone();
    let probe_before = t.probe.clone();
    t.step(&scene, 0).unwrap();
    assert_eq!(t.branch.store(), &before);
    assert_ne!(t.probe, probe_before);
}

#[test]
fn zero_instance_weight_freezes_the_probe() {
    let mut c = short(1);
    c.lambda_i = 0.0;
    let scene = c.scene().unwrap();
    let mut t = Trainer::new(c).unwrap();
    let before = t.probe.clone();
    let branch_before = t.branch.store().clone();
    t.step(&scene, 0).unwrap();
    assert_eq!(t.probe, before);
    assert_ne!(t.branch.store(), &branch_before);
}

#[test]
fn semantic_gradients_scale_with_lambda_s() {
    let c = short(1);
    let scene = c.scene().unwrap();
    let t = Trainer::new(c).unwrap();
    let full = t.gradients(&scene, panfpn::losses::LossWeights::new(1.0, 1.0).unwrap()).unwrap();
    let half = t.gradients(&scene, panfpn::losses::LossWeights::new(1.0, 0.5).unwrap()).unwrap();
    for (a, b) in full.semantic.iter().zip(&half.semantic) {
        for (&x, &y) in a.data().iter().zip(b.data()) {
            assert!((x - 2.0 * y).abs() <= 1e-6 * x.abs().max(1e-3), "{x} vs 2*{y}");
        }
    }
    // instance gradients do not depend on lambda_s
    for (a, b) in full.instance.iter().zip(&half.instance) {
        assert_eq!(a, b);
    }
}

#[test]
fn divergence_is_reported_with_step() {
    let mut c = short(50);
    c.learning_rate = 1e30;
    match train(c, &[c.scene().unwrap()], 0) {
        Err(Error::Diverged { step }) => assert!(step < 50),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.final_miou)),
    }
}

#[test]
fn config_rejects_bad_values() {
    assert!(TrainConfig::parse("learning_rate = 0").is_err());
    assert!(TrainConfig::parse("lambda_s = -1").is_err());
    assert!(TrainConfig::parse("steps = 0").is_err());
    assert!(TrainConfig::parse("unknown = 3").is_err());
}

#[test]
fn checkpoint_round_trips() {
    let c = short(3);
    let out = train(c, &[c.scene().unwrap()], 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.trainer.save_checkpoint(dir.path()).unwrap();
    let mut fresh = Trainer::new(c).unwrap();
    let mut all = fresh.branch.store().clone();
    for p in fresh.probe.store.iter() {
        all.push(p.name.clone(), p.tensor.clone());
    }
    all.load_values(dir.path()).unwrap();
    let n = fresh.branch.store().len();
    for i in 0..n {
        *fresh.branch.store_mut().get_mut(i) = all.get(i).clone();
    }
    assert_eq!(fresh.branch.store(), out.trainer.branch.store());
    for i in 0..fresh.probe.store.len() {
        assert_eq!(all.get(n + i), out.trainer.probe.store.get(i));
    }
}

#[test]
fn stuff_presence_matches_documented_probability() {
    use panfpn::train_demo::stuff_presence_probability;
    assert_eq!(stuff_presence_probability(1), 1.0);
    assert!((stuff_presence_probability(3) - 8.0 / 9.0).abs() < 1e-12);
    let trials = 1500;
    for k in [3usize, 5] {
        let mut hits = 0;
        for seed in 0..trials {
            let s = generate_scene(seed, 64, k, 1).unwrap();
            hits += s.semantic.labels.contains(&0) as usize;
        }
        let p = stuff_presence_probability(k);
        let freq = hits as f64 / trials as f64;
        // ~4 standard deviations
        let tol = 4.0 * (p * (1.0 - p) / trials as f64).sqrt();
        assert!((freq - p).abs() <= tol, "k={k}: {freq} vs {p}");
    }
}

#[test]
fn sweep_miou_is_monotone_in_lambda_s() {
    use panfpn::losses::default_grid;
    use panfpn::train_demo::sweep;
    let c = short(30);
    let table = sweep(c, &[c.scene().unwrap()], &default_grid()).unwrap();
    assert_eq!(table.rows.len(), 9);
    let csv = table.to_csv();
    assert!(csv.starts_with("lambda_i,lambda_s,L_c,L_b,L_m,L_s,L,miou\n"));
    for li in [0.5, 0.75, 1.0] {
        let mious: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.weights.lambda_i == li)
            .map(|r| r.outcome.as_ref().unwrap().metrics[0].1)
            .collect();
        assert_eq!(mious.len(), 3);
        for w in mious.windows(2) {
            assert!(w[1] >= w[0], "lambda_i={li}: {mious:?}");
        }
    }
}
