//! Deliberately naive reference implementations.
//!
//! These are the independent side of every dual-route check: nested loops
//! that follow the defining formulas directly, sharing no code with the
//! optimised kernels. The self-check command and the test suites compare the
//! production paths against them.

use crate::tensor::{Shape, Tensor};

/// Seven-loop cross-correlation with zero padding.
pub fn conv2d_naive(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f32],
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Tensor {
    let s = input.shape();
    let ws = weight.shape();
    let k = ws.h;
    let span = (k - 1) * dilation + 1;
    let oh = (s.h + 2 * padding - span) / stride + 1;
    let ow = (s.w + 2 * padding - span) / stride + 1;
    let os = Shape::new(s.n, ws.n, oh, ow);
    Tensor::from_fn(os, |n, oc, oy, ox| {
        let mut acc = bias[oc] as f64;
        for ic in 0..s.c {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                    let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                    if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                        continue;
                    }
                    acc += weight.at(oc, ic, ky, kx) as f64 * input.at(n, ic, iy as usize, ix as usize) as f64;
                }
            }
        }
        acc as f32
    })
}

pub fn group_norm_naive(input: &Tensor, gamma: &[f32], beta: &[f32], groups: usize, eps: f64) -> Tensor {
    let s = input.shape();
    let cg = s.c / groups;
    let mut mean = vec![0f64; s.n * groups];
    let mut var = vec![0f64; s.n * groups];
    for n in 0..s.n {
        for g in 0..groups {
            let mut vals = Vec::new();
            for c in g * cg..(g + 1) * cg {
                for y in 0..s.h {
                    for x in 0..s.w {
                        vals.push(input.at(n, c, y, x) as f64);
                    }
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            mean[n * groups + g] = m;
            var[n * groups + g] = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
        }
    }
    Tensor::from_fn(s, |n, c, y, x| {
        let i = n * groups + c / cg;
        let xhat = (input.at(n, c, y, x) as f64 - mean[i]) / (var[i] + eps).sqrt();
        (gamma[c] as f64 * xhat + beta[c] as f64) as f32
    })
}

/// Evaluates the half-pixel sampling formula independently at every output
/// pixel.
pub fn bilinear_naive(input: &Tensor, factor: usize) -> Tensor {
    let s = input.shape();
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let src = |dst: usize, len: usize| -> (usize, usize, f64) {
        let mut p = (dst as f64 + 0.5) / factor as f64 - 0.5;
        if p < 0.0 {
            p = 0.0;
        }
        if p > (len - 1) as f64 {
            p = (len - 1) as f64;
        }
        let i0 = p.floor() as usize;
        let i1 = if i0 + 1 < len { i0 + 1 } else { i0 };
        (i0, i1, p - i0 as f64)
    };
    Tensor::from_fn(os, |n, c, oy, ox| {
        let (y0, y1, fy) = src(oy, s.h);
        let (x0, x1, fx) = src(ox, s.w);
        let v = |y, x| input.at(n, c, y, x) as f64;
        let r = (1.0 - fy) * (1.0 - fx) * v(y0, x0)
            + (1.0 - fy) * fx * v(y0, x1)
            + fy * (1.0 - fx) * v(y1, x0)
            + fy * fx * v(y1, x1);
        r as f32
    })
}

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::Rng;

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Norm-wise relative error per checked leaf.
    pub errors: Vec<f64>,
    /// Norm-wise relative error over all checked elements taken as one
    /// vector. Leaves whose true gradient is (near) zero, e.g. a conv bias
    /// feeding a per-channel norm, have meaningless per-leaf ratios; this
    /// one does not.
    pub total_error: f64,
    /// Elements compared.
    pub checked: usize,
    /// Elements skipped because `x - h` and `x + h` straddle a ReLU kink.
    pub skipped: usize,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Central finite-difference check of a recorded computation.
///
/// `build` records a graph over leaves holding `leaves` and returns its
/// output. The scalar probed is `L = sum(out * r)` for a fixed pseudo-random
/// `r`, evaluated in `f64`. For every leaf listed in `check` the analytic
/// gradient is compared against `(L(x + h) - L(x - h)) / 2h` per element,
/// and the norm-wise relative error `|g_a - g_n| / max(|g_a|, |g_n|)` is
/// reported. Elements whose two evaluations disagree on any ReLU sign are
/// left out of both norms: the difference quotient is not a derivative there.
pub fn gradient_check<F>(leaves: &[Tensor], check: &[usize], step: f32, seed: u64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = eval(leaves)?;
    let mut rng = Rng::new(seed);
    let probe = Tensor::from_fn(g.shape(out), |_, _, _, _| rng.symmetric(1.0) as f32);
    let loss = |g: &Graph, out: Var| -> f64 {
        g.value(out)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };
    let grads = g.backward(out, probe.clone())?;
    let mut report = GradCheck {
        errors: Vec::with_capacity(check.len()),
        total_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut work = leaves.to_vec();
    let (mut total_diff, mut total_a, mut total_n) = (0f64, 0f64, 0f64);
    for &li in check {
        let analytic = grads.get_or_zeros(vars[li], leaves[li].shape());
        let (mut diff, mut na, mut nn) = (0f64, 0f64, 0f64);
        for e in 0..leaves[li].shape().numel() {
            let orig = work[li].data()[e];
            work[li].data_mut()[e] = orig + step;
            let (gp, _, op) = eval(&work)?;
            work[li].data_mut()[e] = orig - step;
            let (gm, _, om) = eval(&work)?;
            work[li].data_mut()[e] = orig;
            if gp.relu_pattern() != gm.relu_pattern() {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            // the perturbation actually applied after f32 rounding
            let h = ((orig + step) as f64 - (orig - step) as f64) / 2.0;
            let n = (loss(&gp, op) - loss(&gm, om)) / (2.0 * h);
            let a = analytic.data()[e] as f64;
            diff += (a - n) * (a - n);
            na += a * a;
            nn += n * n;
        }
        let denom = na.sqrt().max(nn.sqrt());
        report.errors.push(if denom == 0.0 { 0.0 } else { diff.sqrt() / denom });
        total_diff += diff;
        total_a += na;
        total_n += nn;
    }
    let denom = total_a.sqrt().max(total_n.sqrt());
    report.total_error = if denom == 0.0 { 0.0 } else { total_diff.sqrt() / denom };
    Ok(report)
}

/// Pixel-by-pixel panoptic fusion, independent of [`crate::fusion`].
///
/// The visiting order is found by repeated selection of the best remaining
/// candidate, and a pixel is taken by an instance iff no earlier survivor's
/// original mask covers it. Returns the id map and `(id, category, is_thing,
/// area)` rows.
pub fn fusion_brute_force(
    instances: &[crate::fusion::InstancePrediction],
    labels: &[u32],
    extent: (usize, usize),
    config: &crate::fusion::FusionConfig,
    table: &crate::panoptic::CategoryTable,
) -> (Vec<u32>, Vec<(u32, u32, bool, u64)>) {
    let npx = extent.0 * extent.1;
    let area = |i: usize| (0..npx).filter(|&p| instances[i].mask.bits()[p]).count() as u64;
    let beats = |a: usize, b: usize| {
        let (sa, sb) = (instances[a].score, instances[b].score);
        sa > sb || (sa == sb && (area(a) > area(b) || (area(a) == area(b) && a < b)))
    };
    let mut left: Vec<usize> = (0..instances.len()).collect();
    let mut survivors: Vec<usize> = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            if beats(left[j], left[best]) {
                best = j;
            }
        }
        let i = left.remove(best);
        let a = area(i);
        if instances[i].score < config.score_threshold || a == 0 {
            continue;
        }
        let free = (0..npx)
            .filter(|&p| instances[i].mask.bits()[p] && !survivors.iter().any(|&s| instances[s].mask.bits()[p]))
            .count() as u64;
        if free > 0 && (free as f64) >= config.keep_fraction as f64 * a as f64 {
            survivors.push(i);
        }
    }

    let owner = |p: usize| survivors.iter().position(|&s| instances[s].mask.bits()[p]);
    let is_stuff_px = |p: usize| {
        owner(p).is_none() && Some(labels[p]) != config.other_class_id && table.is_thing(labels[p]) == Some(false)
    };
    let mut stuff: Vec<u32> = (0..npx).filter(|&p| is_stuff_px(p)).map(|p| labels[p]).collect();
    stuff.sort_unstable();
    stuff.dedup();
    let stuff_area = |c: u32| (0..npx).filter(|&p| is_stuff_px(p) && labels[p] == c).count() as u64;
    let kept: Vec<u32> = stuff.into_iter().filter(|&c| stuff_area(c) >= config.stuff_area_min).collect();

    let ids: Vec<u32> = (0..npx)
        .map(|p| match owner(p) {
            Some(k) => k as u32 + 1,
            None if is_stuff_px(p) => kept
                .iter()
                .position(|&c| c == labels[p])
                .map_or(0, |j| (survivors.len() + j) as u32 + 1),
            None => 0,
        })
        .collect();
    let mut rows = Vec::new();
    for (k, &s) in survivors.iter().enumerate() {
        let id = k as u32 + 1;
        rows.push((id, instances[s].category, true, ids.iter().filter(|&&i| i == id).count() as u64));
    }
    for (j, &c) in kept.iter().enumerate() {
        let id = (survivors.len() + j) as u32 + 1;
        rows.push((id, c, false, ids.iter().filter(|&&i| i == id).count() as u64));
    }
    (ids, rows)
}

/// PQ tallies by trying every (prediction, ground truth) segment pair and
/// counting pixels directly. Returns `category -> (iou_sum, tp, fp, fn)`.
pub fn pq_exhaustive(
    pred: &crate::panoptic::PanopticMap,
    gt: &crate::panoptic::PanopticMap,
) -> std::collections::BTreeMap<u32, (f64, u64, u64, u64)> {
    use std::collections::BTreeMap;
    let count_both = |a: &[u32], ia: u32, b: &[u32], ib: u32| {
        a.iter().zip(b).filter(|&(&x, &y)| x == ia && y == ib).count() as u64
    };
    let mut out: BTreeMap<u32, (f64, u64, u64, u64)> = BTreeMap::new();
    let mut pred_hit = BTreeMap::new();
    for (&g, gs) in gt.segments() {
        let mut hit = false;
        for (&p, ps) in pred.segments() {
            if gs.crowd || gs.category != ps.category {
                continue;
            }
            let inter = count_both(pred.ids(), p, gt.ids(), g);
            let union = (0..gt.ids().len())
                .filter(|&i| gt.ids()[i] != 0 && (gt.ids()[i] == g || pred.ids()[i] == p))
                .count() as u64;
            if union > 0 && 2 * inter > union {
                let e = out.entry(gs.category).or_default();
                e.0 += inter as f64 / union as f64;
                e.1 += 1;
                hit = true;
                pred_hit.insert(p, ());
            }
        }
        if !hit && !gs.crowd {
            out.entry(gs.category).or_default().3 += 1;
        }
    }
    for (&p, ps) in pred.segments() {
        if pred_hit.contains_key(&p) {
            continue;
        }
        let excused = (0..gt.ids().len())
            .filter(|&i| {
                pred.ids()[i] == p
                    && (gt.ids()[i] == 0 || gt.segment(gt.ids()[i]).is_some_and(|s| s.crowd && s.category == ps.category))
            })
            .count() as u64;
        if 2 * excused <= ps.area {
            out.entry(ps.category).or_default().2 += 1;
        }
    }
    out
}
