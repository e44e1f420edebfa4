#![allow(dead_code)]

use panfpn::{Rng, Shape, Tensor};

pub fn random_tensor(rng: &mut Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.symmetric(1.0) as f32)
}

use panfpn::fusion::{FusionConfig, InstancePrediction, LabelMap};
use panfpn::rle::BinaryMask;
use panfpn::{CategoryMeta, CategoryTable};

/// Stuff categories 0..3, things 3..5, `other` = 5.
pub fn toy_table() -> CategoryTable {
    let meta = |id: u32| CategoryMeta {
        id,
        name: format!("c{id}"),
        is_thing: id >= 3,
    };
    CategoryTable::new((0..5).map(meta).collect()).unwrap()
}

pub const TOY_OTHER: u32 = 5;

pub fn random_mask(rng: &mut Rng, h: usize, w: usize) -> BinaryMask {
    match rng.below(4) {
        0 => {
            let (y0, x0) = (rng.below(h), rng.below(w));
            let (y1, x1) = (rng.range(y0 + 1, h + 1), rng.range(x0 + 1, w + 1));
            BinaryMask::from_fn(h, w, |y, x| (y0..y1).contains(&y) && (x0..x1).contains(&x))
        }
        1 => {
            let (cy, cx) = (rng.below(h) as f64, rng.below(w) as f64);
            let (ry, rx) = (rng.range(1, h + 1) as f64, rng.range(1, w + 1) as f64);
            BinaryMask::from_fn(h, w, |y, x| {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                dy * dy + dx * dx <= 1.0
            })
        }
        2 => BinaryMask::from_fn(h, w, |_, _| rng.chance(0.4)),
        _ => BinaryMask::empty(h, w),
    }
}

pub struct FusionCase {
    pub extent: (usize, usize),
    pub instances: Vec<InstancePrediction>,
    pub labels: LabelMap,
    pub config: FusionConfig,
}

/// Random instances over a random label map. Scores come from a small set so
/// ties are frequent; some instances duplicate an earlier mask.
pub fn random_fusion_case(rng: &mut Rng, max_side: usize, max_instances: usize) -> FusionCase {
    let (h, w) = (rng.range(1, max_side + 1), rng.range(1, max_side + 1));
    let n = rng.below(max_instances + 1);
    let mut instances: Vec<InstancePrediction> = Vec::new();
    for _ in 0..n {
        let mask = if !instances.is_empty() && rng.chance(0.2) {
            instances[rng.below(instances.len())].mask.clone()
        } else {
            random_mask(rng, h, w)
        };
        instances.push(InstancePrediction {
            category: 3 + rng.below(2) as u32,
            score: [0.3, 0.5, 0.6, 0.9, 1.0][rng.below(5)],
            mask,
        });
    }
    let labels = (0..h * w).map(|_| rng.below(6) as u32).collect();
    let config = FusionConfig {
        score_threshold: [0.0, 0.5, 0.7][rng.below(3)],
        keep_fraction: [0.0, 0.3, 0.5, 1.0][rng.below(4)],
        stuff_area_min: rng.below(h * w / 3 + 2) as u64,
        other_class_id: Some(TOY_OTHER),
    };
    FusionCase {
        extent: (h, w),
        instances,
        labels: LabelMap::new(h, w, labels).unwrap(),
        config,
    }
}

use panfpn::{PanopticMap, Segment};
use std::collections::BTreeMap;

/// Categories 1, 2 are things, 3, 4 stuff.
pub fn metric_table() -> CategoryTable {
    let meta = |id: u32| CategoryMeta {
        id,
        name: format!("cat{id}"),
        is_thing: id <= 2,
    };
    CategoryTable::new((1..=4).map(meta).collect()).unwrap()
}

/// Builds a map from raw ids, dropping table entries for absent ids.
pub fn build_map(h: usize, w: usize, ids: Vec<u32>, info: &BTreeMap<u32, (u32, bool)>) -> PanopticMap {
    let mut segments = BTreeMap::new();
    for &i in &ids {
        if i == 0 {
            continue;
        }
        let (category, crowd) = info[&i];
        segments
            .entry(i)
            .or_insert(Segment {
                category,
                is_thing: category <= 2,
                area: 0,
                crowd,
            })
            .area += 1;
    }
    PanopticMap::new(h, w, ids, segments).unwrap()
}

/// Blocky random map over `metric_table` categories with some void and crowd.
pub fn random_panoptic(rng: &mut Rng, h: usize, w: usize) -> (PanopticMap, BTreeMap<u32, (u32, bool)>) {
    let n = rng.range(1, 7) as u32;
    let mut info = BTreeMap::new();
    for id in 1..=n {
        let category = rng.range(1, 5) as u32;
        info.insert(id * 3 + 1, (category, category <= 2 && rng.chance(0.15)));
    }
    let keys: Vec<u32> = info.keys().copied().collect();
    let (by, bx) = (rng.range(1, 5), rng.range(1, 5));
    let blocks: Vec<u32> = (0..by * bx)
        .map(|_| if rng.chance(0.1) { 0 } else { keys[rng.below(keys.len())] })
        .collect();
    let ids = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            blocks[(y * by / h) * bx + x * bx / w]
        })
        .collect();
    (build_map(h, w, ids, &info), info)
}

/// Noisy copy of `gt`: pixels flipped to other or new segments, ids renamed.
pub fn perturb(rng: &mut Rng, gt: &PanopticMap, info: &BTreeMap<u32, (u32, bool)>) -> PanopticMap {
    let mut info: BTreeMap<u32, (u32, bool)> = info.iter().map(|(&k, &(c, _))| (k, (c, false))).collect();
    let extra = 1000 + rng.below(3) as u32;
    for id in 1000..=extra {
        info.insert(id, (rng.range(1, 5) as u32, false));
    }
    let keys: Vec<u32> = info.keys().copied().collect();
    let noise = [0.0, 0.1, 0.3, 0.6][rng.below(4)];
    let ids = gt
        .ids()
        .iter()
        .map(|&i| {
            if rng.chance(noise) {
                if rng.chance(0.2) {
                    0
                } else {
                    keys[rng.below(keys.len())]
                }
            } else {
                i
            }
        })
        .collect();
    let offset = rng.range(1, 50) as u32;
    let renamed: BTreeMap<u32, (u32, bool)> = info.iter().map(|(&k, &v)| (k + offset, v)).collect();
    let ids = ids_plus(ids, offset);
    build_map(gt.height(), gt.width(), ids, &renamed)
}

fn ids_plus(ids: Vec<u32>, offset: u32) -> Vec<u32> {
    ids.into_iter().map(|i| if i == 0 { 0 } else { i + offset }).collect()
}

use panfpn::losses::{InstanceLossInputs, SemanticTarget, IGNORE_LABEL};

pub fn random_target(rng: &mut Rng, n: usize, h: usize, w: usize, classes: usize, ignore: f64) -> SemanticTarget {
    let labels = (0..n * h * w)
        .map(|_| {
            if rng.chance(ignore) {
                IGNORE_LABEL
            } else {
                rng.below(classes) as u32
            }
        })
        .collect();
    SemanticTarget::new(n, h, w, labels).unwrap()
}

pub fn random_instance(rng: &mut Rng, r: usize, fg: usize, k: usize, m: usize) -> InstanceLossInputs {
    let f = |rng: &mut Rng, scale: f64| (rng.symmetric(scale)) as f32;
    InstanceLossInputs {
        num_labels: k + 1,
        class_logits: (0..r * (k + 1)).map(|_| f(rng, 3.0)).collect(),
        class_targets: (0..r).map(|i| if i < fg { 1 + rng.below(k) } else { 0 }).collect(),
        box_pred: (0..fg).map(|_| [f(rng, 2.0), f(rng, 2.0), f(rng, 2.0), f(rng, 2.0)]).collect(),
        box_target: (0..fg).map(|_| [f(rng, 2.0), f(rng, 2.0), f(rng, 2.0), f(rng, 2.0)]).collect(),
        mask_size: m,
        mask_logits: (0..fg * m * m).map(|_| f(rng, 4.0)).collect(),
        mask_targets: (0..fg * m * m).map(|_| rng.chance(0.5) as u8).collect(),
    }
}

/// Every RoI twice, foreground rows still first.
pub fn duplicate_rois(i: &InstanceLossInputs) -> InstanceLossInputs {
    let fg = i.box_pred.len();
    let k = i.num_labels;
    let m2 = i.mask_size * i.mask_size;
    // foreground rows stay first so row r of the logits pairs with box r
    let fg_logits = &i.class_logits[..fg * k];
    let bg_logits = &i.class_logits[fg * k..];
    let twice = |v: &[f32]| [v, v].concat();
    InstanceLossInputs {
        num_labels: k,
        class_logits: [twice(fg_logits), twice(bg_logits)].concat(),
        class_targets: [
            twice_usize(&i.class_targets[..fg]),
            twice_usize(&i.class_targets[fg..]),
        ]
        .concat(),
        box_pred: [i.box_pred.clone(), i.box_pred.clone()].concat(),
        box_target: [i.box_target.clone(), i.box_target.clone()].concat(),
        mask_size: i.mask_size,
        mask_logits: twice(&i.mask_logits[..fg * m2]),
        mask_targets: [i.mask_targets.clone(), i.mask_targets.clone()].concat(),
    }
}

pub fn twice_usize(v: &[usize]) -> Vec<usize> {
    [v, v].concat()
}

