use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panfpn::fusion::{panoptic_fuse, FusionConfig, InstancePrediction};
use panfpn::panoptic_io::{read_categories, read_id_png, DatasetWriter, ImageId};
use panfpn::rle::{read_jsonl, write_jsonl};
use panfpn::{CategoryMeta, PanopticMap, Segment, Shape, Tensor};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_panfpn"));
    c.env_remove("PANFPN_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fuse").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fuse_fixture(out: &Path, extra: &[&str]) -> Output {
    let (i, sem, c) = (fixture("instances.jsonl"), fixture("semantic.ptsr"), fixture("categories.json"));
    let mut args = vec![
        "fuse",
        "--instances",
        s(&i),
        "--semantic",
        s(&sem),
        "--categories",
        s(&c),
        "--other-id",
        "5",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn fuse_matches_golden_output_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let o = fuse_fixture(dir.path(), &["--stuff-area", "64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("6 segments (3 things, 3 stuff)"), "{}", stdout(&o));
    let png = fs::read(dir.path().join("panoptic/fused.png")).unwrap();
    assert_eq!(png, fs::read(fixture("golden.png")).unwrap());
    let json = fs::read_to_string(dir.path().join("panoptic.json")).unwrap();
    assert_eq!(json, fs::read_to_string(fixture("golden.json")).unwrap());
}

#[test]
fn fuse_defaults_equal_library_defaults() {
    let d = FusionConfig::default();
    let explicit = [
        "--score-thresh".to_string(),
        d.score_threshold.to_string(),
        "--keep-frac".to_string(),
        d.keep_fraction.to_string(),
        "--stuff-area".to_string(),
        d.stuff_area_min.to_string(),
    ];
    let explicit: Vec<&str> = explicit.iter().map(String::as_str).collect();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(fuse_fixture(a.path(), &[]).status.success());
    assert!(fuse_fixture(b.path(), &explicit).status.success());
    let png_a = fs::read(a.path().join("panoptic/fused.png")).unwrap();
    assert_eq!(png_a, fs::read(b.path().join("panoptic/fused.png")).unwrap());

    // and the same as calling the library with FusionConfig::default()
    let table = read_categories(&fixture("categories.json")).unwrap();
    let probs = Tensor::read_from(fs::read(fixture("semantic.ptsr")).unwrap().as_slice()).unwrap();
    let instances: Vec<InstancePrediction> = read_jsonl(fs::read(fixture("instances.jsonl")).unwrap().as_slice())
        .unwrap()
        .iter()
        .map(|r| InstancePrediction {
            category: r.category,
            score: r.score,
            mask: r.mask().unwrap(),
        })
        .collect();
    let cfg = FusionConfig {
        other_class_id: Some(5),
        ..FusionConfig::default()
    };
    let map = panoptic_fuse(&instances, &probs, &cfg, &table).unwrap();
    let (_, _, ids) = read_id_png(&a.path().join("panoptic/fused.png")).unwrap();
    assert_eq!(ids, map.ids());
}

#[test]
fn fuse_empty_instances_and_uniform_semantics_give_one_stuff_segment() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("empty.jsonl");
    fs::write(&inst, "").unwrap();
    let sem = dir.path().join("sem.ptsr");
    let mut bytes = Vec::new();
    Tensor::from_fn(Shape::new(1, 3, 16, 16), |_, c, _, _| if c == 1 { 0.8 } else { 0.1 })
        .write_to(&mut bytes)
        .unwrap();
    fs::write(&sem, bytes).unwrap();
    let cats = dir.path().join("cats.json");
    fs::write(
        &cats,
        r#"[{"id":0,"name":"a","isthing":0},{"id":1,"name":"b","isthing":0},{"id":2,"name":"c","isthing":1}]"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "--format", "json", "fuse", "--instances", s(&inst), "--semantic", s(&sem), "--categories", s(&cats),
        "--stuff-area", "10", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["segments"], 1);
    assert_eq!(v["stuff"], 1);
    assert_eq!(v["void_pixels"], 0);
}

#[test]
fn fuse_names_the_offending_record() {
    let dir = tempfile::tempdir().unwrap();
    let lines = fs::read_to_string(fixture("instances.jsonl")).unwrap();
    let mut records = read_jsonl(lines.as_bytes()).unwrap();
    records[2].category = 1; // a stuff category
    let bad = dir.path().join("bad.jsonl");
    let mut f = fs::File::create(&bad).unwrap();
    write_jsonl(&mut f, &records).unwrap();
    let (sem, c) = (fixture("semantic.ptsr"), fixture("categories.json"));
    let out = dir.path().join("o");
    let o = run(&["fuse", "--instances", s(&bad), "--semantic", s(&sem), "--categories", s(&c), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(&bad, "{\"category\": 3}\n").unwrap();
    let o = run(&["fuse", "--instances", s(&bad), "--semantic", s(&sem), "--categories", s(&c), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

fn categories() -> Vec<CategoryMeta> {
    vec![
        CategoryMeta { id: 1, name: "car".into(), is_thing: true },
        CategoryMeta { id: 3, name: "road".into(), is_thing: false },
        CategoryMeta { id: 4, name: "grass".into(), is_thing: false },
    ]
}

fn map(w: usize, ids: Vec<u32>, segs: &[(u32, u32)]) -> PanopticMap {
    let mut segments = BTreeMap::new();
    for &(id, category) in segs {
        let area = ids.iter().filter(|&&i| i == id).count() as u64;
        segments.insert(id, Segment { category, is_thing: category == 1, area, crowd: false });
    }
    PanopticMap::new(ids.len() / w, w, ids, segments).unwrap()
}

fn write_dataset(dir: &Path, name: &str, maps: &[(u64, PanopticMap)]) -> PathBuf {
    let png_dir = dir.join(name);
    fs::create_dir_all(&png_dir).unwrap();
    let mut w = DatasetWriter::new(&png_dir, categories()).unwrap();
    for (id, m) in maps {
        w.add(ImageId::Int(*id), &format!("{id}.png"), m).unwrap();
    }
    let json = dir.join(format!("{name}.json"));
    w.finish(&json).unwrap();
    json
}

/// 4x4 image: car (id 1) on the left half, road (id 2) on the right half.
fn gt_map() -> PanopticMap {
    let ids = (0..16).map(|i| if i % 4 < 2 { 1 } else { 2 }).collect();
    map(4, ids, &[(1, 1), (2, 3)])
}

#[test]
fn evaluate_hand_computed_fixture() {
    // The car is predicted exactly (IoU 1). The road prediction covers only
    // the top half of the right side; the bottom half is void. IoU is
    // 4/8 = 0.5, which is not a match, so road gets one FP and one FN.
    // PQ = (100 + 0) / 2 = 50.
    let dir = tempfile::tempdir().unwrap();
    let pred_ids = (0..16)
        .map(|i| if i % 4 < 2 { 1 } else if i < 8 { 2 } else { 0 })
        .collect();
    let pred = map(4, pred_ids, &[(1, 1), (2, 3)]);
    let gt = write_dataset(dir.path(), "gt", &[(7, gt_map())]);
    let pr = write_dataset(dir.path(), "pred", &[(7, pred)]);
    let o = run(&["--format", "json", "evaluate", "--pred", s(&pr), "--gt", s(&gt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["pq"].as_f64().unwrap() - 50.0).abs() <= 0.01, "{v}");
    assert!((v["pq_th"].as_f64().unwrap() - 100.0).abs() <= 0.01);
    assert!(v["pq_st"].as_f64().unwrap().abs() <= 0.01);
    assert_eq!(v["images"], 1);
}

#[test]
fn evaluate_identical_datasets_score_100_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let maps: Vec<(u64, PanopticMap)> = (0..6)
        .map(|k| {
            let ids = (0..64).map(|i| if (i + k) % 8 < 3 { 5 } else { 9 }).collect();
            (k as u64, map(8, ids, &[(5, 1), (9, 4)]))
        })
        .collect();
    let gt = write_dataset(dir.path(), "gt", &maps);
    let pr = write_dataset(dir.path(), "pred", &maps);
    let mut outs = Vec::new();
    for threads in ["1", "4"] {
        let o = run(&["--threads", threads, "--format", "json", "evaluate", "--pred", s(&pr), "--gt", s(&gt)]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(stdout(&o));
    }
    assert_eq!(outs[0], outs[1]);
    let v: Value = serde_json::from_str(&outs[0]).unwrap();
    assert_eq!(v["pq"].as_f64().unwrap(), 100.0);
    assert_eq!(v["images"], 6);
}

#[test]
fn evaluate_reports_missing_prediction_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let gt = write_dataset(dir.path(), "gt", &[(1, gt_map()), (42, gt_map())]);
    let pr = write_dataset(dir.path(), "pred", &[(1, gt_map())]);
    let o = run(&["evaluate", "--pred", s(&pr), "--gt", s(&gt)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing predictions for image ids: 42"), "{}", stderr(&o));
}

fn profile_json(args: &[&str]) -> Value {
    let mut all = vec!["--format", "json", "profile"];
    all.extend_from_slice(args);
    let o = run(&all);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn profile_builtin_fpn_row() {
    let v = profile_json(&["--arch", "builtin:r101-fpn", "--image", "1152x1728"]);
    let madds = v["multiply_adds"].as_f64().unwrap();
    let acts = v["activations"].as_f64().unwrap();
    assert!((0.4e12..=0.6e12).contains(&madds), "{madds}");
    assert!((0.64e9..=0.96e9).contains(&acts), "{acts}");
}

#[test]
fn profile_compare_ratios() {
    let v = profile_json(&["--arch", "builtin:r101", "--image", "1152x1728", "--compare"]);
    let row = |name: &str| {
        v["rows"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["variant"] == name)
            .unwrap()["multiply_adds"]
            .as_f64()
            .unwrap()
    };
    let r = row("dilation-8") / row("dilation-16");
    assert!((2.5..=3.5).contains(&r), "{r}");
}

#[test]
fn profile_single_layer_spec_matches_hand_formula() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("one.arch");
    fs::write(&spec, "name = one\nlayer = conv name=c k=3 cin=3 cout=8 stride=1\n").unwrap();
    let v = profile_json(&["--arch", s(&spec), "--image", "32x32"]);
    assert_eq!(v["multiply_adds"].as_u64().unwrap(), 32 * 32 * 8 * 3 * 3 * 3);
    assert_eq!(v["activations"].as_u64().unwrap(), 8 * 32 * 32);
}

#[test]
fn profile_rejects_malformed_extent() {
    for bad in ["12", "0x32", "axb", "32x"] {
        assert_eq!(run(&["profile", "--image", bad]).status.code(), Some(1), "{bad}");
    }
}

#[test]
fn train_demo_single_step_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run(&["train-demo", "--steps", "1", "--out", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(a.join("loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "step,L_c,L_b,L_m,L_s,L");
    assert!(a.join("checkpoint/manifest.txt").exists());

    for out in [&a, &b] {
        let o = run(&["--seed", "3", "train-demo", "--steps", "5", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
    assert_eq!(fs::read_to_string(a.join("loss.csv")).unwrap().lines().count(), 6);
}

#[test]
fn train_demo_rejects_bad_learning_rate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train-demo", "--lr", "0", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn convert_round_trip_preserves_ids() {
    let dir = tempfile::tempdir().unwrap();
    let tensor = dir.path().join("ids.ptsr");
    let back = dir.path().join("back.png");
    let golden = fixture("golden.png");
    assert!(run(&["convert", "--input", s(&golden), "--output", s(&tensor)]).status.success());
    assert!(run(&["convert", "--input", s(&tensor), "--output", s(&back)]).status.success());
    assert_eq!(read_id_png(&golden).unwrap(), read_id_png(&back).unwrap());
    assert_eq!(run(&["convert", "--input", s(&golden), "--output", "x.txt"]).status.code(), Some(1));
}

#[test]
fn selfcheck_passes_and_lists_every_suite() {
    let o = run(&["selfcheck", "--cases", "60"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for suite in ["conv2d", "groupnorm", "bilinear", "fusion", "pq"] {
        assert!(out.lines().any(|l| l.starts_with(suite) && l.ends_with("pass")), "{out}");
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["fuse", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--format", "xml", "selfcheck"]).status.code(), Some(1));
    assert_eq!(run(&["selfcheck", "--cases", "0"]).status.code(), Some(1));
    let o = run(&["evaluate", "--pred", "/nonexistent/p.json", "--gt", "/nonexistent/g.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/p.json"));
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{not json").unwrap();
    assert_eq!(run(&["evaluate", "--pred", s(&broken), "--gt", s(&broken)]).status.code(), Some(2));
    let o = run(&["profile", "--arch", "builtin:nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_count_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gt = write_dataset(dir.path(), "gt", &[(1, gt_map())]);
    let o = bin()
        .env("PANFPN_THREADS", "2")
        .args(["evaluate", "--pred", s(&gt), "--gt", s(&gt)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("PQ 100.00"));
    let o = bin().env("PANFPN_THREADS", "many").args(["selfcheck"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
