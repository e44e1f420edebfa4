//! Panoptic quality and semantic IoU metrics.
//!
//! PQ follows the standard protocol: a predicted and a ground-truth segment
//! match iff they share a category and IoU > 0.5, where ground-truth void
//! pixels are removed from the union. Crowd segments never match; an
//! unmatched prediction whose pixels lie mostly (> 50%) in ground-truth void
//! or same-category crowd regions is not counted as a false positive.
//! Results are percentages.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panoptic::{CategoryTable, PanopticMap};

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CategoryStats {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl CategoryStats {
    pub fn is_present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    fn denominator(&self) -> f64 {
        self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64
    }

    /// Segmentation quality: mean IoU of matched pairs (0 without matches).
    pub fn sq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    /// Recognition quality.
    pub fn rq(&self) -> f64 {
        let d = self.denominator();
        if d == 0.0 {
            0.0
        } else {
            self.tp as f64 / d
        }
    }

    pub fn pq(&self) -> f64 {
        let d = self.denominator();
        if d == 0.0 {
            0.0
        } else {
            self.iou_sum / d
        }
    }
}

/// Per-category PQ tallies; additive across images.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PqStats {
    pub per_category: BTreeMap<u32, CategoryStats>,
}

impl PqStats {
    pub fn get(&self, category: u32) -> CategoryStats {
        self.per_category.get(&category).copied().unwrap_or_default()
    }

    fn entry(&mut self, category: u32) -> &mut CategoryStats {
        self.per_category.entry(category).or_default()
    }

    pub fn merge(&mut self, other: &PqStats) {
        for (&c, s) in &other.per_category {
            let e = self.entry(c);
            e.iou_sum += s.iou_sum;
            e.tp += s.tp;
            e.fp += s.fp;
            e.fn_ += s.fn_;
        }
    }
}

/// Matches the segments of one image.
pub fn pq_match(pred: &PanopticMap, gt: &PanopticMap) -> Result<PqStats> {
    if pred.extent() != gt.extent() {
        return Err(Error::shape(
            "pq_match",
            format!("{:?}", gt.extent()),
            format!("{:?}", pred.extent()),
        ));
    }
    let mut inter: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (&g, &p) in gt.ids().iter().zip(pred.ids()) {
        *inter.entry((g, p)).or_insert(0) += 1;
    }
    let mut stats = PqStats::default();
    let mut gt_matched = BTreeMap::new();
    let mut pred_matched = BTreeMap::new();
    for (&(g, p), &n) in &inter {
        let (Some(gs), Some(ps)) = (gt.segment(g), pred.segment(p)) else {
            continue;
        };
        if gs.crowd || gs.category != ps.category {
            continue;
        }
        let void = inter.get(&(0, p)).copied().unwrap_or(0);
        let union = ps.area + gs.area - n - void;
        let iou = n as f64 / union as f64;
        if iou > MATCH_IOU {
            let e = stats.entry(gs.category);
            e.tp += 1;
            e.iou_sum += iou;
            gt_matched.insert(g, ());
            pred_matched.insert(p, ());
        }
    }
    for (&g, gs) in gt.segments() {
        if !gs.crowd && !gt_matched.contains_key(&g) {
            stats.entry(gs.category).fn_ += 1;
        }
    }
    for (&p, ps) in pred.segments() {
        if pred_matched.contains_key(&p) {
            continue;
        }
        let mut excused = inter.get(&(0, p)).copied().unwrap_or(0);
        for (&g, gs) in gt.segments() {
            if gs.crowd && gs.category == ps.category {
                excused += inter.get(&(g, p)).copied().unwrap_or(0);
            }
        }
        if excused as f64 / ps.area as f64 > MATCH_IOU {
            continue;
        }
        stats.entry(ps.category).fp += 1;
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryReport {
    pub id: u32,
    pub name: String,
    pub is_thing: bool,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PqSummary {
    pub pq: f64,
    /// `None` when no thing category is present.
    pub pq_th: Option<f64>,
    pub pq_st: Option<f64>,
    pub per_category: Vec<CategoryReport>,
}

/// Averages per-category PQ over categories that occur in either the
/// predictions or the ground truth.
pub fn compute_pq(stats: &PqStats, table: &CategoryTable) -> Result<PqSummary> {
    let mut per_category = Vec::new();
    for (&id, s) in &stats.per_category {
        let meta = table
            .get(id)
            .ok_or_else(|| Error::Validation(format!("category {id} is not in the category table")))?;
        if !s.is_present() {
            continue;
        }
        per_category.push(CategoryReport {
            id,
            name: meta.name.clone(),
            is_thing: meta.is_thing,
            pq: 100.0 * s.pq(),
            sq: 100.0 * s.sq(),
            rq: 100.0 * s.rq(),
            tp: s.tp,
            fp: s.fp,
            fn_: s.fn_,
        });
    }
    if per_category.is_empty() {
        return Err(Error::Degenerate("no category occurs in predictions or ground truth".into()));
    }
    let mean = |f: &dyn Fn(&CategoryReport) -> bool| {
        let v: Vec<f64> = per_category.iter().filter(|c| f(c)).map(|c| c.pq).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(PqSummary {
        pq: mean(&|_| true).expect("non-empty"),
        pq_th: mean(&|c| c.is_thing),
        pq_st: mean(&|c| !c.is_thing),
        per_category,
    })
}

/// Pixel tallies `counts[pred * k + gt]`, plus ground-truth pixels that the
/// prediction left unassigned (void).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
    unassigned: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
            unassigned: vec![0; k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, pred: usize, gt: usize) -> u64 {
        self.counts[pred * self.k + gt]
    }

    pub fn unassigned(&self, gt: usize) -> u64 {
        self.unassigned[gt]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unassigned.iter().sum::<u64>()
    }

    /// Tallies one pixel. `gt = None` pixels are ignored; `pred = None`
    /// counts as a miss of the ground-truth class.
    pub fn record(&mut self, pred: Option<usize>, gt: Option<usize>) -> Result<()> {
        let Some(g) = gt else { return Ok(()) };
        if g >= self.k || pred.is_some_and(|p| p >= self.k) {
            return Err(Error::invalid(format!("label outside {} classes", self.k)));
        }
        match pred {
            Some(p) => self.counts[p * self.k + g] += 1,
            None => self.unassigned[g] += 1,
        }
        Ok(())
    }

    /// Adds label maps; ground-truth `ignore` pixels are skipped.
    pub fn add_labels(&mut self, pred: &[u32], gt: &[u32], ignore: u32) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape("confusion matrix", gt.len(), pred.len()));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore {
                continue;
            }
            self.record(Some(p as usize), Some(g as usize))?;
        }
        Ok(())
    }

    /// Adds the category maps of two panoptic maps; classes are indexed in
    /// ascending category id of `table`. Ground-truth void is ignored.
    pub fn add_panoptic(&mut self, pred: &PanopticMap, gt: &PanopticMap, table: &CategoryTable) -> Result<()> {
        if pred.extent() != gt.extent() {
            return Err(Error::shape("confusion matrix", format!("{:?}", gt.extent()), format!("{:?}", pred.extent())));
        }
        let index: BTreeMap<u32, usize> = table.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
        let class_of = |map: &PanopticMap, id: u32| -> Result<Option<usize>> {
            match map.segment(id) {
                None => Ok(None),
                Some(s) => index
                    .get(&s.category)
                    .copied()
                    .map(Some)
                    .ok_or_else(|| Error::Validation(format!("category {} is not in the category table", s.category))),
            }
        };
        for (&g, &p) in gt.ids().iter().zip(pred.ids()) {
            self.record(class_of(pred, p)?, class_of(gt, g)?)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::shape("confusion merge", self.k, other.k));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unassigned.iter_mut().zip(&other.unassigned) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouSummary {
    pub miou: f64,
    pub fiou: f64,
    /// IoU per class, `None` for classes without ground-truth pixels.
    pub per_class: Vec<Option<f64>>,
}

pub fn compute_miou(cm: &ConfusionMatrix) -> Result<MiouSummary> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Degenerate("confusion matrix holds no evaluated pixels".into()));
    }
    let k = cm.k;
    let mut per_class = Vec::with_capacity(k);
    let (mut sum, mut n, mut fiou) = (0.0, 0usize, 0.0);
    for c in 0..k {
        let tp = cm.get(c, c);
        let gt: u64 = (0..k).map(|p| cm.get(p, c)).sum::<u64>() + cm.unassigned[c];
        let pred: u64 = (0..k).map(|g| cm.get(c, g)).sum();
        if gt == 0 {
            per_class.push(None);
            continue;
        }
        let iou = tp as f64 / (gt + pred - tp) as f64;
        per_class.push(Some(100.0 * iou));
        sum += iou;
        n += 1;
        fiou += gt as f64 / total as f64 * iou;
    }
    Ok(MiouSummary {
        miou: 100.0 * sum / n as f64,
        fiou: 100.0 * fiou,
        per_class,
    })
}

/// Combined report, serialised as
/// `{pq, pq_th, pq_st, miou, fiou, per_category: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub images: usize,
    pub pq: f64,
    pub pq_th: Option<f64>,
    pub pq_st: Option<f64>,
    pub miou: f64,
    pub fiou: f64,
    pub per_category: Vec<CategoryReport>,
}

impl MetricReport {
    pub fn new(images: usize, pq: PqSummary, miou: MiouSummary) -> Self {
        MetricReport {
            images,
            pq: pq.pq,
            pq_th: pq.pq_th,
            pq_st: pq.pq_st,
            miou: miou.miou,
            fiou: miou.fiou,
            per_category: pq.per_category,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Accumulates PQ and confusion statistics over image pairs.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub pq: PqStats,
    pub confusion: ConfusionMatrix,
    pub images: usize,
}

impl Evaluator {
    pub fn new(table: &CategoryTable) -> Self {
        Evaluator {
            pq: PqStats::default(),
            confusion: ConfusionMatrix::new(table.len()),
            images: 0,
        }
    }

    pub fn add(&mut self, pred: &PanopticMap, gt: &PanopticMap, table: &CategoryTable) -> Result<()> {
        let stats = pq_match(pred, gt)?;
        self.confusion.add_panoptic(pred, gt, table)?;
        self.pq.merge(&stats);
        self.images += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Evaluator) -> Result<()> {
        self.pq.merge(&other.pq);
        self.confusion.merge(&other.confusion)?;
        self.images += other.images;
        Ok(())
    }

    pub fn report(&self, table: &CategoryTable) -> Result<MetricReport> {
        Ok(MetricReport::new(
            self.images,
            compute_pq(&self.pq, table)?,
            compute_miou(&self.confusion)?,
        ))
    }
}
