use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use panfpn::fusion::{panoptic_fuse, FusionConfig, InstancePrediction};
use panfpn::metrics::{Evaluator, MetricReport};
use panfpn::panoptic_io::{
    decode_id_png, encode_id_png, ids_to_tensor, load_dataset, read_categories, read_file, tensor_to_ids,
    DatasetLoader, DatasetWriter, ImageId, LoadOptions,
};
use panfpn::profiler::{builtin, compare_variants, parse_arch, profile_batch, ArchSpec};
use panfpn::rle::read_jsonl;
use panfpn::train_demo::{curve_csv, sweep, train, TrainConfig};
use panfpn::{losses, selfcheck, CategoryTable, Tensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::{Cli, CliError, Command, ConvertArgs, EvaluateArgs, Format, FuseArgs, ProfileArgs, SelfcheckArgs, TrainDemoArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Fuse(a) => fuse(a, cli.format),
        Command::Evaluate(a) => evaluate(a, cli.format, cli.threads),
        Command::Profile(a) => profile(a, cli.format),
        Command::TrainDemo(a) => train_demo(a, cli.format, cli.seed),
        Command::Convert(a) => convert(a, cli.format),
        Command::Selfcheck(a) => run_selfcheck(a, cli.format, cli.seed.unwrap_or(0)),
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialisable output") + "\n"
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn image_id(s: &str) -> ImageId {
    s.parse().map(ImageId::Int).unwrap_or_else(|_| ImageId::Str(s.to_string()))
}

#[derive(Serialize)]
struct FuseSummary {
    segments: usize,
    things: usize,
    stuff: usize,
    void_pixels: usize,
    json: PathBuf,
    png: PathBuf,
}

fn fuse(a: &FuseArgs, format: Format) -> Result<String> {
    let config = FusionConfig {
        score_threshold: a.score_thresh,
        keep_fraction: a.keep_frac,
        stuff_area_min: a.stuff_area,
        other_class_id: a.other_id,
    };
    config.validate()?;
    let table = read_categories(&a.categories)?;
    let semantic = Tensor::read_from(read_file(&a.semantic)?.as_slice())
        .map_err(|e| CliError::Data(format!("{}: {e}", a.semantic.display())))?;
    let s = semantic.shape();
    let records = read_jsonl(read_file(&a.instances)?.as_slice())?;
    let mut instances = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let line = i + 1;
        let mask = r
            .mask()
            .map_err(|e| CliError::Data(format!("instance record on line {line}: {e}")))?;
        if mask.extent() != (s.h, s.w) {
            return Err(CliError::Data(format!(
                "instance record on line {line}: mask is {}x{}, semantic map is {}x{}",
                mask.extent().0,
                mask.extent().1,
                s.h,
                s.w
            )));
        }
        if !r.score.is_finite() {
            return Err(CliError::Data(format!("instance record on line {line}: non-finite score")));
        }
        match table.is_thing(r.category) {
            Some(true) => {}
            Some(false) => {
                return Err(CliError::Data(format!(
                    "instance record on line {line}: category {} is a stuff category",
                    r.category
                )))
            }
            None => {
                return Err(CliError::Data(format!(
                    "instance record on line {line}: unknown category {}",
                    r.category
                )))
            }
        }
        instances.push(InstancePrediction {
            category: r.category,
            score: r.score,
            mask,
        });
    }
    let map = panoptic_fuse(&instances, &semantic, &config, &table)?;

    let png_dir = a.out.join("panoptic");
    let json_path = a.out.join("panoptic.json");
    fs::create_dir_all(&png_dir).map_err(|e| CliError::Data(format!("{}: {e}", png_dir.display())))?;
    let mut writer = DatasetWriter::new(&png_dir, table.iter().cloned().collect())?;
    writer.add(image_id(&a.image_id), &a.file_name, &map)?;
    writer.finish(&json_path)?;

    let things = map.segments().values().filter(|s| s.is_thing).count();
    let summary = FuseSummary {
        segments: map.segments().len(),
        things,
        stuff: map.segments().len() - things,
        void_pixels: map.void_pixels(),
        json: json_path,
        png: png_dir.join(&a.file_name),
    };
    Ok(match format {
        Format::Json => json(&summary),
        Format::Csv => format!(
            "segments,things,stuff,void_pixels\n{},{},{},{}\n",
            summary.segments, summary.things, summary.stuff, summary.void_pixels
        ),
        Format::Text => format!(
            "{} segments ({} things, {} stuff), {} void pixels\nwrote {} and {}\n",
            summary.segments,
            summary.things,
            summary.stuff,
            summary.void_pixels,
            summary.json.display(),
            summary.png.display()
        ),
    })
}

fn default_png_dir(json: &Path) -> PathBuf {
    json.with_extension("")
}

fn evaluate(a: &EvaluateArgs, format: Format, threads: usize) -> Result<String> {
    let opts = LoadOptions {
        repair_areas: a.repair_areas,
    };
    let pred_dir = a.pred_dir.clone().unwrap_or_else(|| default_png_dir(&a.pred));
    let gt_dir = a.gt_dir.clone().unwrap_or_else(|| default_png_dir(&a.gt));
    let pred = load_dataset(&a.pred, &pred_dir, opts)?;
    let gt = load_dataset(&a.gt, &gt_dir, opts)?;
    let table = CategoryTable::new(gt.categories().to_vec())?;
    let pairs = pair_images(&pred, &gt)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    let partials: Vec<Evaluator> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(pi, gi)| -> Result<Evaluator> {
                let gr = &gt.records()[gi];
                let name = |e: panfpn::Error| CliError::Data(format!("image {}: {e}", gr.image_id));
                let p = pred.load(&pred.records()[pi]).map_err(name)?;
                let g = gt.load(gr).map_err(name)?;
                let mut ev = Evaluator::new(&table);
                ev.add(&p, &g, &table).map_err(name)?;
                Ok(ev)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    // sequential merge in ground-truth order: identical sums for any thread count
    let mut total = Evaluator::new(&table);
    for ev in &partials {
        total.merge(ev)?;
    }
    let report = total.report(&table)?;
    Ok(match format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report_csv(&report),
        Format::Text => report_text(&report),
    })
}

/// Index pairs `(pred, gt)` in ground-truth order, or an error listing the
/// image ids present on one side only.
fn pair_images(pred: &DatasetLoader, gt: &DatasetLoader) -> Result<Vec<(usize, usize)>> {
    let index = |d: &DatasetLoader, what: &str| -> Result<std::collections::BTreeMap<ImageId, usize>> {
        let mut m = std::collections::BTreeMap::new();
        for (i, r) in d.records().iter().enumerate() {
            if m.insert(r.image_id.clone(), i).is_some() {
                return Err(CliError::Data(format!("{what}: duplicate image id {}", r.image_id)));
            }
        }
        Ok(m)
    };
    let p = index(pred, "predictions")?;
    let g = index(gt, "ground truth")?;
    let pk: BTreeSet<_> = p.keys().collect();
    let gk: BTreeSet<_> = g.keys().collect();
    if pk != gk {
        let list = |s: Vec<&&ImageId>| s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ");
        let missing = list(gk.difference(&pk).collect());
        let extra = list(pk.difference(&gk).collect());
        let mut msg = String::from("image sets differ");
        if !missing.is_empty() {
            let _ = write!(msg, "; missing predictions for image ids: {missing}");
        }
        if !extra.is_empty() {
            let _ = write!(msg, "; predictions for unknown image ids: {extra}");
        }
        return Err(CliError::Data(msg));
    }
    Ok(gt
        .records()
        .iter()
        .enumerate()
        .map(|(gi, r)| (p[&r.image_id], gi))
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

fn report_text(r: &MetricReport) -> String {
    let mut out = format!(
        "images {}\nPQ {:.2}  PQ_th {}  PQ_st {}\nmIoU {:.2}  fIoU {:.2}\n",
        r.images,
        r.pq,
        opt(r.pq_th),
        opt(r.pq_st),
        r.miou,
        r.fiou
    );
    for c in &r.per_category {
        let _ = writeln!(
            out,
            "  {:>4} {:<20} {} PQ {:6.2} SQ {:6.2} RQ {:6.2}  tp {} fp {} fn {}",
            c.id,
            c.name,
            if c.is_thing { "thing" } else { "stuff" },
            c.pq,
            c.sq,
            c.rq,
            c.tp,
            c.fp,
            c.fn_
        );
    }
    out
}

fn report_csv(r: &MetricReport) -> String {
    let mut out = String::from("category,name,isthing,pq,sq,rq,tp,fp,fn\n");
    for c in &r.per_category {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.id, c.name, c.is_thing as u8, c.pq, c.sq, c.rq, c.tp, c.fp, c.fn_
        );
    }
    out
}

fn load_arch(arch: &str) -> Result<ArchSpec> {
    match arch.strip_prefix("builtin:") {
        Some(name) => builtin(name).map_err(CliError::from),
        None => {
            let text = read_file(Path::new(arch))?;
            let text = String::from_utf8(text).map_err(|e| CliError::Data(format!("{arch}: {e}")))?;
            Ok(parse_arch(&text)?)
        }
    }
}

fn profile(a: &ProfileArgs, format: Format) -> Result<String> {
    let spec = load_arch(&a.arch)?;
    let image = (a.image.0, a.image.1);
    if a.compare {
        let c = compare_variants(&spec, image)?;
        return Ok(match format {
            Format::Json => json(&c),
            Format::Csv => c.to_csv(),
            Format::Text => c.to_text(),
        });
    }
    let r = profile_batch(&spec, image, a.batch)?;
    Ok(match format {
        Format::Json => json(&r),
        Format::Csv => r.to_csv(),
        Format::Text => r.to_text(),
    })
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    seed: u64,
    learning_rate: f64,
    final_loss: f64,
    miou: f64,
    loss_csv: PathBuf,
    checkpoint: PathBuf,
}

fn train_demo(a: &TrainDemoArgs, format: Format, seed: Option<u64>) -> Result<String> {
    let mut config = match &a.config {
        Some(p) => {
            let text = String::from_utf8(read_file(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            TrainConfig::parse(&text)?
        }
        None => TrainConfig::reference(),
    };
    if let Some(s) = a.steps {
        config.steps = s;
    }
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
    }
    if let Some(v) = a.lambda_i {
        config.lambda_i = v;
    }
    if let Some(v) = a.lambda_s {
        config.lambda_s = v;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    let scene = config.scene()?;
    let outcome = train(config, std::slice::from_ref(&scene), 0)?;
    let loss_csv = a.out.join("loss.csv");
    let checkpoint = a.out.join("checkpoint");
    write_file(&loss_csv, curve_csv(&outcome.curve).as_bytes())?;
    fs::create_dir_all(&checkpoint).map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    outcome.trainer.save_checkpoint(&checkpoint)?;
    if a.sweep {
        let table = sweep(config, std::slice::from_ref(&scene), &losses::default_grid())?;
        write_file(&a.out.join("sweep.csv"), table.to_csv().as_bytes())?;
    }
    let summary = TrainSummary {
        steps: outcome.curve.len(),
        seed: config.seed,
        learning_rate: config.learning_rate,
        final_loss: outcome.curve.last().map(|r| r.losses.total).unwrap_or(f64::NAN),
        miou: outcome.final_miou,
        loss_csv,
        checkpoint,
    };
    Ok(match format {
        Format::Json => json(&summary),
        Format::Csv => format!(
            "steps,seed,learning_rate,final_loss,miou\n{},{},{},{},{}\n",
            summary.steps, summary.seed, summary.learning_rate, summary.final_loss, summary.miou
        ),
        Format::Text => format!(
            "{} steps, final loss {:.4}, training-scene mIoU {:.2}\nwrote {} and {}\n",
            summary.steps,
            summary.final_loss,
            summary.miou,
            summary.loss_csv.display(),
            summary.checkpoint.display()
        ),
    })
}

fn extension(p: &Path) -> String {
    p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn convert(a: &ConvertArgs, format: Format) -> Result<String> {
    let (from, to) = (extension(&a.input), extension(&a.output));
    let (h, w) = match (from.as_str(), to.as_str()) {
        ("png", "ptsr") => {
            let (h, w, ids) = decode_id_png(&read_file(&a.input)?)?;
            let mut bytes = Vec::new();
            ids_to_tensor(h, w, &ids)?.write_to(&mut bytes)?;
            write_file(&a.output, &bytes)?;
            (h, w)
        }
        ("ptsr", "png") => {
            let t = Tensor::read_from(read_file(&a.input)?.as_slice())?;
            let (h, w, ids) = tensor_to_ids(&t)?;
            write_file(&a.output, &encode_id_png(h, w, &ids)?)?;
            (h, w)
        }
        _ => {
            return Err(CliError::Usage(format!(
                "cannot convert .{from} to .{to}; supported: .png -> .ptsr and .ptsr -> .png"
            )))
        }
    };
    Ok(match format {
        Format::Json => json(&serde_json::json!({ "height": h, "width": w, "output": a.output })),
        Format::Csv => format!("height,width,output\n{h},{w},{}\n", a.output.display()),
        Format::Text => format!("converted {h}x{w} id map to {}\n", a.output.display()),
    })
}

fn run_selfcheck(a: &SelfcheckArgs, format: Format, seed: u64) -> Result<String> {
    if a.cases == 0 {
        return Err(CliError::Usage("--cases must be at least 1".into()));
    }
    let report = selfcheck::run(seed, a.cases);
    let out = match format {
        Format::Json => json(&report),
        Format::Csv => report.to_csv(),
        Format::Text => report.to_text(),
    };
    if report.passed() {
        Ok(out)
    } else {
        Err(CliError::Internal(format!("self-check failed\n{out}")))
    }
}
