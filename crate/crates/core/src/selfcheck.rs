//! Built-in oracle suites: the fast kernels, fusion and PQ matching are
//! re-run against their naive reference implementations on seeded random
//! cases.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::fusion::{merge_semantic, resolve_instances, FusionConfig, InstancePrediction, LabelMap};
use crate::metrics::pq_match;
use crate::ops::{self, ConvGeometry, ConvParams, GroupNormParams};
use crate::oracle;
use crate::panoptic::{CategoryMeta, CategoryTable, PanopticMap, Segment};
use crate::rle::BinaryMask;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

const KERNEL_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub detail: Option<String>,
    pub seconds: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.suites {
            out.push_str(&format!(
                "{:<10} {:>5} cases  {}{}\n",
                s.name,
                s.cases,
                if s.passed() { "pass" } else { "FAIL" },
                s.detail.as_ref().map(|d| format!("  ({d})")).unwrap_or_default()
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("suite,cases,failures,passed\n");
        for s in &self.suites {
            out.push_str(&format!("{},{},{},{}\n", s.name, s.cases, s.failures, s.passed()));
        }
        out
    }
}

/// Runs every suite with `cases` random cases each.
pub fn run(seed: u64, cases: usize) -> SelfCheckReport {
    let mut rng = Rng::new(seed);
    let suites: [(&str, fn(&mut Rng) -> Result<(), String>); 5] = [
        ("conv2d", conv_case),
        ("groupnorm", group_norm_case),
        ("bilinear", bilinear_case),
        ("fusion", fusion_case),
        ("pq", pq_case),
    ];
    let suites = suites
        .iter()
        .map(|&(name, case)| {
            let mut suite_rng = rng.fork();
            let start = Instant::now();
            let mut failures = 0;
            let mut detail = None;
            for i in 0..cases {
                if let Err(e) = case(&mut suite_rng) {
                    failures += 1;
                    detail.get_or_insert(format!("case {i}: {e}"));
                }
            }
            SuiteResult {
                name: name.to_string(),
                cases,
                failures,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    SelfCheckReport { seed, suites }
}

fn random_tensor(rng: &mut Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.symmetric(1.0) as f32)
}

fn close(fast: &Tensor, slow: &Tensor) -> Result<(), String> {
    if fast.shape() != slow.shape() {
        return Err(format!("shape {:?} vs {:?}", fast.shape(), slow.shape()));
    }
    let d = fast.max_abs_diff(slow);
    if d > KERNEL_TOLERANCE {
        return Err(format!("max abs diff {d:e}"));
    }
    Ok(())
}

fn conv_case(rng: &mut Rng) -> Result<(), String> {
    let k = if rng.chance(0.5) { 3 } else { 1 };
    let g = ConvGeometry {
        stride: rng.range(1, 3),
        padding: rng.range(0, 3),
        dilation: rng.range(1, 3),
    };
    let span = (k - 1) * g.dilation + 1;
    let (c_in, c_out) = (rng.range(1, 5), rng.range(1, 5));
    let shape = Shape::new(rng.range(1, 3), c_in, rng.range(span, 10), rng.range(span, 10));
    let x = random_tensor(rng, shape);
    let w = random_tensor(rng, Shape::new(c_out, c_in, k, k));
    let b = random_tensor(rng, Shape::new(c_out, 1, 1, 1));
    let p = ConvParams::new(w.clone(), b.clone(), g).map_err(|e| e.to_string())?;
    let fast = ops::conv2d(&x, &p).map_err(|e| e.to_string())?;
    close(&fast, &oracle::conv2d_naive(&x, &w, b.data(), g.stride, g.padding, g.dilation))
}

fn group_norm_case(rng: &mut Rng) -> Result<(), String> {
    let groups = [1, 2, 4][rng.below(3)];
    let c = groups * rng.range(1, 4);
    let shape = Shape::new(rng.range(1, 3), c, rng.range(1, 6), rng.range(1, 6));
    let x = random_tensor(rng, shape);
    let gamma = random_tensor(rng, Shape::new(c, 1, 1, 1));
    let beta = random_tensor(rng, Shape::new(c, 1, 1, 1));
    let p = GroupNormParams::new(groups, gamma.clone(), beta.clone(), 1e-5).map_err(|e| e.to_string())?;
    let fast = ops::group_norm(&x, &p).map_err(|e| e.to_string())?;
    close(&fast, &oracle::group_norm_naive(&x, gamma.data(), beta.data(), groups, 1e-5))
}

fn bilinear_case(rng: &mut Rng) -> Result<(), String> {
    let factor = [2, 4][rng.below(2)];
    let shape = Shape::new(rng.range(1, 3), rng.range(1, 4), rng.range(1, 7), rng.range(1, 7));
    let x = random_tensor(rng, shape);
    let fast = ops::bilinear_upsample(&x, factor).map_err(|e| e.to_string())?;
    close(&fast, &oracle::bilinear_naive(&x, factor))
}

/// Stuff 0..3, things 3..5, `other` = 5.
fn fusion_table() -> CategoryTable {
    let meta = |id: u32| CategoryMeta {
        id,
        name: format!("c{id}"),
        is_thing: id >= 3,
    };
    CategoryTable::new((0..5).map(meta).collect()).expect("static table")
}

fn random_mask(rng: &mut Rng, h: usize, w: usize) -> BinaryMask {
    if rng.chance(0.5) {
        let (y0, x0) = (rng.below(h), rng.below(w));
        let (y1, x1) = (rng.range(y0 + 1, h + 1), rng.range(x0 + 1, w + 1));
        BinaryMask::from_fn(h, w, |y, x| (y0..y1).contains(&y) && (x0..x1).contains(&x))
    } else {
        BinaryMask::from_fn(h, w, |_, _| rng.chance(0.4))
    }
}

fn fusion_case(rng: &mut Rng) -> Result<(), String> {
    let (h, w) = (rng.range(1, 17), rng.range(1, 17));
    let instances: Vec<InstancePrediction> = (0..rng.below(5))
        .map(|_| InstancePrediction {
            category: 3 + rng.below(2) as u32,
            score: [0.3, 0.5, 0.9, 1.0][rng.below(4)],
            mask: random_mask(rng, h, w),
        })
        .collect();
    let labels: Vec<u32> = (0..h * w).map(|_| rng.below(6) as u32).collect();
    let config = FusionConfig {
        score_threshold: [0.0, 0.5][rng.below(2)],
        keep_fraction: [0.0, 0.5, 1.0][rng.below(3)],
        stuff_area_min: rng.below(h * w / 3 + 2) as u64,
        other_class_id: Some(5),
    };
    let table = fusion_table();
    let label_map = LabelMap::new(h, w, labels.clone()).map_err(|e| e.to_string())?;
    let kept = resolve_instances(&instances, &config, (h, w)).map_err(|e| e.to_string())?;
    let map = merge_semantic(&kept, &label_map, &config, &table).map_err(|e| e.to_string())?;
    let (ids, rows) = oracle::fusion_brute_force(&instances, &labels, (h, w), &config, &table);
    if map.ids() != ids.as_slice() {
        return Err("id maps differ".into());
    }
    let got: Vec<_> = map.segments().iter().map(|(&id, s)| (id, s.category, s.is_thing, s.area)).collect();
    if got != rows {
        return Err("segment tables differ".into());
    }
    Ok(())
}

fn random_map(rng: &mut Rng, h: usize, w: usize, crowd: bool) -> Result<PanopticMap, String> {
    let ids: Vec<u32> = (0..h * w).map(|_| rng.below(5) as u32).collect();
    let cats: Vec<u32> = (0..5).map(|_| rng.range(1, 5) as u32).collect();
    let mut segments = BTreeMap::new();
    for &i in ids.iter().filter(|&&i| i != 0) {
        let category = cats[i as usize];
        segments
            .entry(i)
            .or_insert(Segment {
                category,
                is_thing: category <= 2,
                area: 0,
                crowd: crowd && category <= 2 && i == 1,
            })
            .area += 1;
    }
    PanopticMap::new(h, w, ids, segments).map_err(|e| e.to_string())
}

fn pq_case(rng: &mut Rng) -> Result<(), String> {
    let (h, w) = (rng.range(2, 9), rng.range(2, 9));
    let gt = random_map(rng, h, w, true)?;
    // a prediction sharing most of the ground truth so matches occur
    let noisy = random_map(rng, h, w, false)?;
    let keep = rng.next_f64();
    let ids: Vec<u32> = gt
        .ids()
        .iter()
        .zip(noisy.ids())
        .map(|(&g, &n)| match (rng.next_f64() < keep, n) {
            (true, _) => g,
            (false, 0) => 0,
            (false, n) => n + 10,
        })
        .collect();
    let mut segments = BTreeMap::new();
    for &i in ids.iter().filter(|&&i| i != 0) {
        let src = if i >= 10 { noisy.segment(i - 10) } else { gt.segment(i) };
        let category = src.map(|s| s.category).ok_or("missing segment")?;
        segments
            .entry(i)
            .or_insert(Segment {
                category,
                is_thing: category <= 2,
                area: 0,
                crowd: false,
            })
            .area += 1;
    }
    let pred = PanopticMap::new(h, w, ids, segments).map_err(|e| e.to_string())?;
    let stats = pq_match(&pred, &gt).map_err(|e| e.to_string())?;
    let reference = oracle::pq_exhaustive(&pred, &gt);
    let present = stats.per_category.values().filter(|s| s.is_present()).count();
    if present != reference.len() {
        return Err(format!("{present} categories present, reference has {}", reference.len()));
    }
    for (&c, &(iou, tp, fp, fn_)) in &reference {
        let s = stats.get(c);
        if (s.tp, s.fp, s.fn_) != (tp, fp, fn_) || (s.iou_sum - iou).abs() > 1e-12 {
            return Err(format!("category {c} differs"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_and_are_deterministic() {
        let a = run(5, 40);
        assert!(a.passed(), "{}", a.to_text());
        assert_eq!(a.suites.len(), 5);
        let b = run(5, 40);
        let strip = |r: &SelfCheckReport| r.suites.iter().map(|s| (s.name.clone(), s.failures)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert!(a.to_csv().starts_with("suite,cases,failures,passed\n"));
    }
}
