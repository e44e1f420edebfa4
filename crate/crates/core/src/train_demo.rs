//! Desk-scale training demo: the semantic branch plus a linear instance
//! probe overfit procedurally generated scenes with plain SGD on the joint
//! loss.
//!
//! Scenes are `extent x extent` images made of horizontal stuff bands with
//! rectangles and ellipses on top. Instance pixels carry the single `other`
//! label (`num_classes`), so the semantic head predicts `num_classes + 1`
//! channels. Pyramid features are block averages of the one-hot label map
//! pushed through a fixed random projection, plus small uniform noise.
//!
//! The instance branch is represented by its loss inputs only: a trainable
//! linear probe maps pooled pyramid features of sampled RoIs to class
//! logits, box deltas and mask logits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kvconfig;
use crate::losses::{
    instance_losses_with_grad, joint_gradients, lambda_sweep, semantic_loss, InstanceGrads, InstanceLossInputs,
    LossBreakdown, LossWeights, SemanticTarget, SweepCell, SweepTable,
};
use crate::metrics::{compute_miou, ConfusionMatrix};
use crate::params::ParamStore;
use crate::rle::BinaryMask;
use crate::rng::Rng;
use crate::semantic_branch::{BranchConfig, PyramidLevels, SemanticBranch, LEVEL_STRIDES};
use crate::tensor::{Shape, Tensor};

/// Reference configuration of the demo, frozen after tuning.
pub const DEFAULT_CONFIG: &str = include_str!("../config/train_demo.conf");

/// Thing classes: 1 = rectangle, 2 = ellipse; 0 is background.
pub const NUM_THING_LABELS: usize = 3;
pub const MASK_SIZE: usize = 7;
const FEATURE_NOISE: f64 = 0.05;
const BACKGROUND_ROIS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyInstance {
    /// 1 = rectangle, 2 = ellipse.
    pub class: usize,
    /// `[y0, x0, y1, x1)` in pixels.
    pub bbox: [usize; 4],
    pub mask: BinaryMask,
}

/// Precomputed probe inputs and targets for the sampled RoIs.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiBatch {
    /// `R` pooled feature vectors; foreground RoIs first.
    pub features: Vec<Vec<f32>>,
    /// `R_fg * M * M` per-cell feature vectors.
    pub mask_features: Vec<Vec<f32>>,
    pub class_targets: Vec<usize>,
    pub box_targets: Vec<[f32; 4]>,
    pub mask_targets: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub extent: usize,
    pub num_classes: usize,
    pub pyramid: PyramidLevels,
    pub semantic: SemanticTarget,
    pub instances: Vec<ToyInstance>,
    pub rois: RoiBatch,
}

impl ToyScene {
    pub fn other_label(&self) -> u32 {
        self.num_classes as u32
    }
}

/// Builds a scene. Stuff bands: 2 to 4 (uniform) horizontal bands, each at
/// least `extent / 8` rows tall, whose classes cycle from a random start.
/// Instances are 10 to 24 pixels wide, so no band is ever fully covered and
/// a stuff class is present iff one of the bands carries it; see
/// [`stuff_presence_probability`]. Instances: 1 to 3 non-overlapping
/// rectangles or ellipses, so `other` is always present.
pub fn generate_scene(seed: u64, extent: usize, num_classes: usize, channel_dim: usize) -> Result<ToyScene> {
    if extent == 0 || extent % 32 != 0 {
        return Err(Error::invalid(format!("scene extent {extent} must be a positive multiple of 32")));
    }
    if num_classes == 0 || channel_dim == 0 {
        return Err(Error::invalid("scene needs at least one stuff class and one feature channel"));
    }
    let mut rng = Rng::new(seed);
    let mut layout = rng.fork();
    let mut proj_rng = rng.fork();
    let mut noise = rng.fork();
    let mut roi_rng = rng.fork();

    let n = extent;
    let bands = layout.range(2, 5);
    // every band is at least n/8 rows tall so it survives the stride-4 features
    let mut heights = vec![n / 8; bands];
    for _ in 0..n - bands * (n / 8) {
        heights[layout.below(bands)] += 1;
    }
    let cuts: Vec<usize> = heights[..bands - 1]
        .iter()
        .scan(0, |acc, h| {
            *acc += h;
            Some(*acc)
        })
        .collect();
    let start = layout.below(num_classes);
    let band_of = |y: usize| cuts.iter().filter(|&&c| y >= c).count();
    let mut labels: Vec<u32> = (0..n * n).map(|i| ((start + band_of(i / n)) % num_classes) as u32).collect();

    let other = num_classes as u32;
    let mut instances: Vec<ToyInstance> = Vec::new();
    let wanted = layout.range(1, 4);
    let mut attempts = 0;
    while instances.len() < wanted && attempts < 200 {
        attempts += 1;
        let (h, w) = (layout.range(10, 25), layout.range(10, 25));
        let (y0, x0) = (layout.below(n - h + 1), layout.below(n - w + 1));
        let bbox = [y0, x0, y0 + h, x0 + w];
        let overlaps = instances
            .iter()
            .any(|o| bbox[0] < o.bbox[2] + 1 && o.bbox[0] < bbox[2] + 1 && bbox[1] < o.bbox[3] + 1 && o.bbox[1] < bbox[3] + 1);
        if overlaps {
            continue;
        }
        let class = 1 + layout.below(2);
        let (cy, cx) = ((bbox[0] + bbox[2]) as f64 / 2.0, (bbox[1] + bbox[3]) as f64 / 2.0);
        let (ry, rx) = (h as f64 / 2.0, w as f64 / 2.0);
        let mask = BinaryMask::from_fn(n, n, |y, x| {
            let inside = (bbox[0]..bbox[2]).contains(&y) && (bbox[1]..bbox[3]).contains(&x);
            if class == 1 {
                inside
            } else {
                let (dy, dx) = ((y as f64 + 0.5 - cy) / ry, (x as f64 + 0.5 - cx) / rx);
                inside && dy * dy + dx * dx <= 1.0
            }
        });
        for (l, &b) in labels.iter_mut().zip(mask.bits()) {
            if b {
                *l = other;
            }
        }
        instances.push(ToyInstance { class, bbox, mask });
    }

    let k = num_classes + 1;
    let projection: Vec<f32> = (0..channel_dim * k).map(|_| proj_rng.symmetric(1.0) as f32).collect();
    let levels = LEVEL_STRIDES
        .iter()
        .map(|&s| {
            let m = n / s;
            let mut data = vec![0f32; channel_dim * m * m];
            for cy in 0..m {
                for cx in 0..m {
                    let mut frac = vec![0f64; k];
                    for y in cy * s..(cy + 1) * s {
                        for x in cx * s..(cx + 1) * s {
                            frac[labels[y * n + x] as usize] += 1.0;
                        }
                    }
                    for c in 0..channel_dim {
                        let v: f64 = (0..k).map(|j| projection[c * k + j] as f64 * frac[j]).sum::<f64>() / (s * s) as f64;
                        data[(c * m + cy) * m + cx] = (v + noise.symmetric(FEATURE_NOISE)) as f32;
                    }
                }
            }
            Tensor::new(Shape::new(1, channel_dim, m, m), data)
        })
        .collect::<Result<Vec<_>>>()?;
    let pyramid = PyramidLevels::new(levels)?;
    let rois = sample_rois(&mut roi_rng, &pyramid, &instances, &labels, n, other);
    Ok(ToyScene {
        extent: n,
        num_classes,
        pyramid,
        semantic: SemanticTarget::new(1, n, n, labels)?,
        instances,
        rois,
    })
}

/// Probability that a given stuff class appears in a generated scene with
/// `num_classes` stuff classes: the mean over band counts b in {2, 3, 4} of
/// min(b, k) / k.
pub fn stuff_presence_probability(num_classes: usize) -> f64 {
    let k = num_classes.max(1);
    (2..=4).map(|b: usize| b.min(k) as f64 / k as f64).sum::<f64>() / 3.0
}

fn cell_feature(level: &Tensor, y: usize, x: usize) -> Vec<f32> {
    let c = level.shape().c;
    (0..c).map(|ch| level.at(0, ch, y, x)).collect()
}

fn pooled_feature(level: &Tensor, bbox: [usize; 4], stride: usize) -> Vec<f32> {
    let s = level.shape();
    let (y0, x0) = (bbox[0] / stride, bbox[1] / stride);
    let y1 = bbox[2].div_ceil(stride).clamp(y0 + 1, s.h);
    let x1 = bbox[3].div_ceil(stride).clamp(x0 + 1, s.w);
    let count = ((y1 - y0) * (x1 - x0)) as f32;
    (0..s.c)
        .map(|c| {
            let mut acc = 0f32;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += level.at(0, c, y, x);
                }
            }
            acc / count
        })
        .collect()
}

fn sample_rois(
    rng: &mut Rng,
    pyramid: &PyramidLevels,
    instances: &[ToyInstance],
    labels: &[u32],
    n: usize,
    other: u32,
) -> RoiBatch {
    let finest = &pyramid.levels()[0];
    let stride = LEVEL_STRIDES[0];
    let mut batch = RoiBatch {
        features: Vec::new(),
        mask_features: Vec::new(),
        class_targets: Vec::new(),
        box_targets: Vec::new(),
        mask_targets: Vec::new(),
    };
    for inst in instances {
        // proposal: the ground-truth box jittered by up to 2 pixels per side
        let mut p = [0usize; 4];
        for (j, v) in p.iter_mut().enumerate() {
            let jitter = rng.range(0, 5) as isize - 2;
            *v = (inst.bbox[j] as isize + jitter).clamp(0, n as isize) as usize;
        }
        if p[2] <= p[0] + 1 {
            p[2] = (p[0] + 2).min(n);
            p[0] = p[2] - 2;
        }
        if p[3] <= p[1] + 1 {
            p[3] = (p[1] + 2).min(n);
            p[1] = p[3] - 2;
        }
        let (ph, pw) = ((p[2] - p[0]) as f32, (p[3] - p[1]) as f32);
        let (gh, gw) = ((inst.bbox[2] - inst.bbox[0]) as f32, (inst.bbox[3] - inst.bbox[1]) as f32);
        batch.box_targets.push([
            (inst.bbox[0] as f32 - p[0] as f32) / ph,
            (inst.bbox[1] as f32 - p[1] as f32) / pw,
            (gh / ph).ln(),
            (gw / pw).ln(),
        ]);
        batch.features.push(pooled_feature(finest, p, stride));
        batch.class_targets.push(inst.class);
        for i in 0..MASK_SIZE {
            for j in 0..MASK_SIZE {
                let y = (p[0] as f32 + (i as f32 + 0.5) * ph / MASK_SIZE as f32) as usize;
                let x = (p[1] as f32 + (j as f32 + 0.5) * pw / MASK_SIZE as f32) as usize;
                let (y, x) = (y.min(n - 1), x.min(n - 1));
                batch.mask_targets.push(inst.mask.get(y, x) as u8);
                batch.mask_features.push(cell_feature(finest, y / stride, x / stride));
            }
        }
    }
    // background RoIs: boxes whose pixels are mostly stuff
    let mut placed = 0;
    for _ in 0..100 {
        if placed == BACKGROUND_ROIS {
            break;
        }
        let s = rng.range(8, 17);
        let (y0, x0) = (rng.below(n - s + 1), rng.below(n - s + 1));
        let bbox = [y0, x0, y0 + s, x0 + s];
        let things = (y0..y0 + s)
            .flat_map(|y| (x0..x0 + s).map(move |x| (y, x)))
            .filter(|&(y, x)| labels[y * n + x] == other)
            .count();
        if things * 10 > s * s {
            continue;
        }
        batch.features.push(pooled_feature(finest, bbox, stride));
        batch.class_targets.push(0);
        placed += 1;
    }
    batch
}

/// Linear RoI probe: class logits, box deltas and per-cell mask logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub store: ParamStore,
    dim: usize,
}

const PROBE_CLASS_W: usize = 0;
const PROBE_CLASS_B: usize = 1;
const PROBE_BOX_W: usize = 2;
const PROBE_BOX_B: usize = 3;
const PROBE_MASK_W: usize = 4;
const PROBE_MASK_B: usize = 5;

impl Probe {
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let bound = (6.0 / dim as f64).sqrt();
        let w = |rows: usize, rng: &mut Rng| {
            Tensor::from_fn(Shape::new(rows, dim, 1, 1), |_, _, _, _| rng.symmetric(bound) as f32)
        };
        let cw = w(NUM_THING_LABELS, rng);
        let bw = w(4, rng);
        let mw = w(1, rng);
        store.push("probe.class.weight", cw);
        store.push("probe.class.bias", Tensor::zeros(Shape::new(NUM_THING_LABELS, 1, 1, 1)));
        store.push("probe.box.weight", bw);
        store.push("probe.box.bias", Tensor::zeros(Shape::new(4, 1, 1, 1)));
        store.push("probe.mask.weight", mw);
        store.push("probe.mask.bias", Tensor::zeros(Shape::new(1, 1, 1, 1)));
        Probe { store, dim }
    }

    fn linear(&self, w: usize, b: usize, rows: usize, f: &[f32]) -> Vec<f32> {
        let (w, b) = (self.store.get(w).data(), self.store.get(b).data());
        (0..rows)
            .map(|r| {
                let dot: f64 = (0..self.dim).map(|d| w[r * self.dim + d] as f64 * f[d] as f64).sum();
                (dot + b[r] as f64) as f32
            })
            .collect()
    }

    pub fn inputs(&self, rois: &RoiBatch) -> InstanceLossInputs {
        let fg = rois.box_targets.len();
        InstanceLossInputs {
            num_labels: NUM_THING_LABELS,
            class_logits: rois
                .features
                .iter()
                .flat_map(|f| self.linear(PROBE_CLASS_W, PROBE_CLASS_B, NUM_THING_LABELS, f))
                .collect(),
            class_targets: rois.class_targets.clone(),
            box_pred: rois.features[..fg]
                .iter()
                .map(|f| {
                    let v = self.linear(PROBE_BOX_W, PROBE_BOX_B, 4, f);
                    [v[0], v[1], v[2], v[3]]
                })
                .collect(),
            box_target: rois.box_targets.clone(),
            mask_size: MASK_SIZE,
            mask_logits: rois
                .mask_features
                .iter()
                .map(|f| self.linear(PROBE_MASK_W, PROBE_MASK_B, 1, f)[0])
                .collect(),
            mask_targets: rois.mask_targets.clone(),
        }
    }

    /// Chains output gradients back to the probe parameters (store order).
    pub fn backward(&self, rois: &RoiBatch, g: &InstanceGrads) -> Vec<Tensor> {
        let mut grads: Vec<Tensor> = self.store.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        let dim = self.dim;
        let acc = |grads: &mut Vec<Tensor>, w: usize, b: usize, row: usize, go: f32, f: &[f32]| {
            for d in 0..dim {
                grads[w].data_mut()[row * dim + d] += go * f[d];
            }
            grads[b].data_mut()[row] += go;
        };
        for (r, f) in rois.features.iter().enumerate() {
            for j in 0..NUM_THING_LABELS {
                acc(&mut grads, PROBE_CLASS_W, PROBE_CLASS_B, j, g.class_logits[r * NUM_THING_LABELS + j], f);
            }
        }
        for (r, gb) in g.box_pred.iter().enumerate() {
            for (j, &go) in gb.iter().enumerate() {
                acc(&mut grads, PROBE_BOX_W, PROBE_BOX_B, j, go, &rois.features[r]);
            }
        }
        for (f, &go) in rois.mask_features.iter().zip(&g.mask_logits) {
            acc(&mut grads, PROBE_MASK_W, PROBE_MASK_B, 0, go, f);
        }
        grads
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_i: f64,
    pub lambda_s: f64,
    pub seed: u64,
    /// Stuff classes; the branch adds one `other` channel.
    pub num_classes: usize,
    pub branch_width: usize,
    pub channel_dim: usize,
    pub extent: usize,
    /// mIoU (percent) the reference run reaches on its training scene.
    pub miou_target: f64,
}

impl TrainConfig {
    pub fn reference() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("bundled train-demo config parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig {
            steps: 1,
            learning_rate: 0.1,
            lambda_i: 1.0,
            lambda_s: 1.0,
            seed: 0,
            num_classes: 3,
            branch_width: 32,
            channel_dim: 16,
            extent: 64,
            miou_target: 90.0,
        };
        for e in kvconfig::parse(text)? {
            match e.key.as_str() {
                "steps" => c.steps = e.parse_value()?,
                "learning_rate" => c.learning_rate = e.parse_value()?,
                "lambda_i" => c.lambda_i = e.parse_value()?,
                "lambda_s" => c.lambda_s = e.parse_value()?,
                "seed" => c.seed = e.parse_value()?,
                "classes" => c.num_classes = e.parse_value()?,
                "width" => c.branch_width = e.parse_value()?,
                "channel_dim" => c.channel_dim = e.parse_value()?,
                "extent" => c.extent = e.parse_value()?,
                "miou_target" => c.miou_target = e.parse_value()?,
                _ => {
                    return Err(Error::malformed(
                        "train config",
                        format!("line {}: unknown key `{}`", e.line, e.key),
                    ))
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        self.weights()?;
        Ok(())
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda_i, self.lambda_s)
    }

    pub fn branch_config(&self) -> BranchConfig {
        let mut b = BranchConfig::new(self.num_classes, true);
        b.branch_width = self.branch_width;
        b.channel_dim = self.channel_dim;
        b
    }

    pub fn scene(&self) -> Result<ToyScene> {
        generate_scene(self.seed, self.extent, self.num_classes, self.channel_dim)
    }
}

/// Gradients of one evaluation of the joint loss.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub losses: LossBreakdown,
    /// Semantic branch parameters, store order.
    pub semantic: Vec<Tensor>,
    /// Probe parameters, store order.
    pub instance: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub branch: SemanticBranch,
    pub probe: Probe,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub losses: LossBreakdown,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed ^ 0x5EED_0F_7A1E);
        let branch = SemanticBranch::new(config.branch_config(), &mut rng)?;
        let probe = Probe::new(config.channel_dim, &mut rng);
        Ok(Trainer { config, branch, probe })
    }

    pub fn gradients(&self, scene: &ToyScene, weights: LossWeights) -> Result<StepGradients> {
        let mut g = Graph::new();
        let pyramid: Vec<_> = scene.pyramid.levels().iter().map(|t| g.leaf(t.clone())).collect();
        let trace = self.branch.record(&mut g, &pyramid)?;
        let sem = semantic_loss(g.value(trace.logits), &scene.semantic)?;
        let inputs = self.probe.inputs(&scene.rois);
        let (inst, inst_grads) = instance_losses_with_grad(&inputs)?;
        let (inst_grads, seed) = joint_gradients(&inst_grads, &sem.grad, weights);
        let grads = g.backward(trace.logits, seed)?;
        Ok(StepGradients {
            losses: LossBreakdown::new(inst, sem.loss, weights),
            semantic: trace.params.iter().map(|&v| grads.get_or_zeros(v, g.shape(v))).collect(),
            instance: self.probe.backward(&scene.rois, &inst_grads),
        })
    }

    /// One SGD step; returns the losses before the update.
    pub fn step(&mut self, scene: &ToyScene, step: usize) -> Result<LossBreakdown> {
        let g = self.gradients(scene, self.config.weights()?)?;
        let l = &g.losses;
        let terms = [l.instance.classification, l.instance.box_regression, l.instance.mask, l.semantic, l.total];
        if terms.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let lr = self.config.learning_rate as f32;
        for (i, grad) in g.semantic.iter().enumerate() {
            sgd(self.branch.store_mut().get_mut(i), grad, lr);
        }
        for (i, grad) in g.instance.iter().enumerate() {
            sgd(self.probe.store.get_mut(i), grad, lr);
        }
        Ok(g.losses)
    }

    pub fn predict_labels(&self, scene: &ToyScene) -> Result<Vec<u32>> {
        let probs = self.branch.forward(&scene.pyramid)?;
        let s = probs.shape();
        let p = s.plane();
        Ok((0..p)
            .map(|i| {
                let mut best = 0;
                for c in 1..s.c {
                    if probs.data()[c * p + i] > probs.data()[best * p + i] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect())
    }

    /// Semantic mIoU (percent) on a scene.
    pub fn miou(&self, scene: &ToyScene) -> Result<f64> {
        let pred = self.predict_labels(scene)?;
        let mut cm = ConfusionMatrix::new(self.branch.config().output_channels());
        cm.add_labels(&pred, &scene.semantic.labels, crate::losses::IGNORE_LABEL)?;
        Ok(compute_miou(&cm)?.miou)
    }

    /// Branch and probe parameters in one manifest.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        let mut all = self.branch.store().clone();
        for p in self.probe.store.iter() {
            all.push(p.name.clone(), p.tensor.clone());
        }
        all.save(dir)
    }
}

fn sgd(param: &mut Tensor, grad: &Tensor, lr: f32) {
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub curve: Vec<LossRow>,
    /// First step (1-based count of updates) after which mIoU reached the
    /// target, if checked.
    pub reached_target_at: Option<usize>,
    pub final_miou: f64,
}

/// Trains on `scenes` round-robin. When `check_every > 0`, mIoU on the first
/// scene is measured every `check_every` updates and training stops early
/// once it reaches `miou_target`.
pub fn train(config: TrainConfig, scenes: &[ToyScene], check_every: usize) -> Result<TrainOutcome> {
    if scenes.is_empty() {
        return Err(Error::invalid("training needs at least one scene"));
    }
    let mut trainer = Trainer::new(config)?;
    let mut curve = Vec::with_capacity(config.steps);
    let mut reached = None;
    for step in 0..config.steps {
        let losses = trainer.step(&scenes[step % scenes.len()], step)?;
        curve.push(LossRow { step, losses });
        if check_every > 0 && (step + 1) % check_every == 0 && trainer.miou(&scenes[0])? >= config.miou_target {
            reached = Some(step + 1);
            break;
        }
    }
    let final_miou = trainer.miou(&scenes[0])?;
    Ok(TrainOutcome {
        trainer,
        curve,
        reached_target_at: reached,
        final_miou,
    })
}

pub fn curve_csv(curve: &[LossRow]) -> String {
    let mut out = String::from("step,L_c,L_b,L_m,L_s,L\n");
    for r in curve {
        let l = &r.losses;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, l.instance.classification, l.instance.box_regression, l.instance.mask, l.semantic, l.total
        );
    }
    out
}

/// Trains one model per grid point for `config.steps` steps and reports the
/// final-step losses plus training-scene mIoU. Failed cells (e.g. divergence)
/// are kept in the table.
pub fn sweep(config: TrainConfig, scenes: &[ToyScene], grid: &[LossWeights]) -> Result<SweepTable> {
    lambda_sweep(grid, |w| {
        let mut c = config;
        c.lambda_i = w.lambda_i;
        c.lambda_s = w.lambda_s;
        let out = train(c, scenes, 0)?;
        let last = out.curve.last().expect("steps >= 1").losses;
        Ok(SweepCell {
            losses: last,
            metrics: vec![("miou".to_string(), out.final_miou)],
        })
    })
}
