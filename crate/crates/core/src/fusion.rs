//! Panoptic inference: merge scored instance masks and a semantic label map
//! into one non-overlapping panoptic map.
//!
//! 1. Instances below the score threshold (or with empty masks) are dropped;
//!    the rest are visited by descending score, larger mask first on ties,
//!    then input order. Each claims its still-unclaimed pixels and is
//!    discarded if it keeps less than `keep_fraction` of its mask, or nothing
//!    at all.
//! 2. Instance pixels win over semantic labels.
//! 3. Remaining pixels form one segment per stuff class; `other`, thing
//!    labels and stuff segments smaller than `stuff_area_min` become void.
//!
//! Ids are `1..` for surviving instances in visiting order, followed by stuff
//! segments in ascending category id.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::panoptic::{CategoryTable, PanopticMap, Segment};
use crate::rle::BinaryMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub category: u32,
    pub score: f32,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub score_threshold: f32,
    pub keep_fraction: f32,
    pub stuff_area_min: u64,
    /// Semantic label discarded during fusion.
    pub other_class_id: Option<u32>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            score_threshold: 0.5,
            keep_fraction: 0.5,
            stuff_area_min: 4096,
            other_class_id: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("score_threshold", self.score_threshold), ("keep_fraction", self.keep_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// An instance that survived overlap resolution, restricted to the pixels
/// it claimed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedInstance {
    /// Position in the input list.
    pub index: usize,
    pub category: u32,
    pub score: f32,
    pub mask: BinaryMask,
}

/// Visiting order: descending score, then larger area, then input order.
pub fn priority_order(instances: &[InstancePrediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let areas: Vec<u64> = instances.iter().map(|i| i.mask.area()).collect();
    order.sort_by(|&a, &b| {
        instances[b]
            .score
            .partial_cmp(&instances[a].score)
            .unwrap_or(Ordering::Equal)
            .then(areas[b].cmp(&areas[a]))
            .then(a.cmp(&b))
    });
    order
}

pub fn resolve_instances(
    instances: &[InstancePrediction],
    config: &FusionConfig,
    extent: (usize, usize),
) -> Result<Vec<ResolvedInstance>> {
    config.validate()?;
    for (i, inst) in instances.iter().enumerate() {
        if inst.mask.extent() != extent {
            return Err(Error::shape(
                "resolve_instances",
                format!("{}x{}", extent.0, extent.1),
                format!("instance {i} mask {}x{}", inst.mask.extent().0, inst.mask.extent().1),
            ));
        }
        if !inst.score.is_finite() {
            return Err(Error::invalid(format!("instance {i} has non-finite score")));
        }
    }
    let mut claimed = vec![false; extent.0 * extent.1];
    let mut out = Vec::new();
    for idx in priority_order(instances) {
        let inst = &instances[idx];
        let area = inst.mask.area();
        if inst.score < config.score_threshold || area == 0 {
            continue;
        }
        let free: Vec<bool> = inst
            .mask
            .bits()
            .iter()
            .zip(&claimed)
            .map(|(&m, &c)| m && !c)
            .collect();
        let kept = free.iter().filter(|&&b| b).count() as u64;
        if kept == 0 || (kept as f64) < config.keep_fraction as f64 * area as f64 {
            continue;
        }
        for (c, &f) in claimed.iter_mut().zip(&free) {
            *c |= f;
        }
        out.push(ResolvedInstance {
            index: idx,
            category: inst.category,
            score: inst.score,
            mask: BinaryMask::new(extent.0, extent.1, free)?,
        });
    }
    Ok(out)
}

/// Per-pixel label map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape("label map", height * width, labels.len()));
        }
        Ok(LabelMap { height, width, labels })
    }

    /// Argmax over channels of a `(1, C, H, W)` tensor, lowest channel on
    /// ties, mapped to category ids through `table`.
    pub fn argmax(probs: &Tensor, table: &CategoryTable) -> Result<Self> {
        let s = probs.shape();
        if s.n != 1 || s.c == 0 {
            return Err(Error::shape("semantic argmax", "(1, C>0, H, W)", s));
        }
        let channel_ids = (0..s.c).map(|c| table.channel_category(c)).collect::<Result<Vec<_>>>()?;
        let p = s.plane();
        let data = probs.data();
        let labels = (0..p)
            .map(|i| {
                let mut best = 0;
                for c in 1..s.c {
                    if data[c * p + i] > data[best * p + i] {
                        best = c;
                    }
                }
                channel_ids[best]
            })
            .collect();
        LabelMap::new(s.h, s.w, labels)
    }
}

pub fn merge_semantic(
    surviving: &[ResolvedInstance],
    semantic: &LabelMap,
    config: &FusionConfig,
    table: &CategoryTable,
) -> Result<PanopticMap> {
    let (h, w) = (semantic.height, semantic.width);
    let mut ids = vec![0u32; h * w];
    let mut segments = BTreeMap::new();
    for (k, inst) in surviving.iter().enumerate() {
        if inst.mask.extent() != (h, w) {
            return Err(Error::shape("merge_semantic", format!("{h}x{w}"), "instance mask of another extent"));
        }
        match table.is_thing(inst.category) {
            Some(true) => {}
            Some(false) => return Err(Error::invalid(format!("instance category {} is a stuff class", inst.category))),
            None => return Err(Error::invalid(format!("unknown instance category {}", inst.category))),
        }
        let id = k as u32 + 1;
        let mut area = 0;
        for (px, &b) in inst.mask.bits().iter().enumerate() {
            if b {
                if ids[px] != 0 {
                    return Err(Error::invalid("surviving instance masks overlap"));
                }
                ids[px] = id;
                area += 1;
            }
        }
        if area > 0 {
            segments.insert(
                id,
                Segment {
                    category: inst.category,
                    is_thing: true,
                    area,
                    crowd: false,
                },
            );
        }
    }

    let mut stuff_area: BTreeMap<u32, u64> = BTreeMap::new();
    for (px, &label) in semantic.labels.iter().enumerate() {
        if ids[px] != 0 || Some(label) == config.other_class_id {
            continue;
        }
        match table.is_thing(label) {
            Some(false) => *stuff_area.entry(label).or_insert(0) += 1,
            Some(true) => {}
            None => return Err(Error::invalid(format!("unknown semantic category {label}"))),
        }
    }
    let mut next = surviving.len() as u32 + 1;
    let mut stuff_ids = BTreeMap::new();
    for (&label, &area) in &stuff_area {
        if area >= config.stuff_area_min {
            stuff_ids.insert(label, next);
            segments.insert(
                next,
                Segment {
                    category: label,
                    is_thing: false,
                    area,
                    crowd: false,
                },
            );
            next += 1;
        }
    }
    for (px, &label) in semantic.labels.iter().enumerate() {
        if ids[px] == 0 {
            if let Some(&id) = stuff_ids.get(&label) {
                ids[px] = id;
            }
        }
    }
    PanopticMap::new(h, w, ids, segments)
}

pub fn panoptic_fuse(
    instances: &[InstancePrediction],
    semantic_probs: &Tensor,
    config: &FusionConfig,
    table: &CategoryTable,
) -> Result<PanopticMap> {
    let labels = LabelMap::argmax(semantic_probs, table)?;
    let surviving = resolve_instances(instances, config, (labels.height, labels.width))?;
    merge_semantic(&surviving, &labels, config, table)
}
