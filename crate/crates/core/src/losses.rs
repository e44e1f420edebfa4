//! Joint instance/semantic loss with per-term normalisation.
//!
//! * `L_c`: softmax cross entropy over sampled RoIs, divided by `R`.
//! * `L_b`: smooth-L1 (transition 1.0) summed over the four box coordinates
//!   of every foreground RoI, divided by `R`.
//! * `L_m`: per-pixel binary cross entropy averaged inside each foreground
//!   RoI, then divided by `R_fg`.
//! * `L_s`: per-pixel cross entropy over labelled pixels, divided by their
//!   count.
//!
//! `L = lambda_i (L_c + L_b + L_m) + lambda_s L_s`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IGNORE_LABEL: u32 = 255;

/// Per-pixel class labels, `IGNORE_LABEL` for unlabelled pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTarget {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u32>,
}

impl SemanticTarget {
    pub fn new(n: usize, h: usize, w: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != n * h * w {
            return Err(Error::shape("semantic target", n * h * w, labels.len()));
        }
        Ok(SemanticTarget { n, h, w, labels })
    }

    pub fn labeled_pixels(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_LABEL).count()
    }
}

#[derive(Debug, Clone)]
pub struct SemanticLoss {
    pub loss: f64,
    /// `dL_s / d(logits)`, zero at ignored pixels.
    pub grad: Tensor,
    pub labeled_pixels: usize,
}

/// Cross entropy from logits through a fused, max-shifted log-softmax.
pub fn semantic_loss(logits: &Tensor, target: &SemanticTarget) -> Result<SemanticLoss> {
    let s = logits.shape();
    if (s.n, s.h, s.w) != (target.n, target.h, target.w) {
        return Err(Error::shape(
            "semantic_loss",
            format!("logits spatial ({}, {}, {})", target.n, target.h, target.w),
            s,
        ));
    }
    let labeled = target.labeled_pixels();
    if labeled == 0 {
        return Err(Error::Degenerate("semantic loss: every pixel carries the ignore label".into()));
    }
    if let Some(&bad) = target
        .labels
        .iter()
        .find(|&&l| l != IGNORE_LABEL && l as usize >= s.c)
    {
        return Err(Error::invalid(format!("label {bad} outside {} classes", s.c)));
    }
    let p = s.plane();
    let x = logits.data();
    let inv = 1.0 / labeled as f64;
    let mut grad = vec![0f32; s.numel()];
    let mut total = 0f64;
    let mut prob = vec![0f64; s.c];
    for n in 0..s.n {
        let base = s.offset(n, 0, 0, 0);
        for i in 0..p {
            let label = target.labels[n * p + i];
            if label == IGNORE_LABEL {
                continue;
            }
            let max = (0..s.c).map(|c| x[base + c * p + i] as f64).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0f64;
            for (c, e) in prob.iter_mut().enumerate() {
                *e = (x[base + c * p + i] as f64 - max).exp();
                z += *e;
            }
            let log_z = z.ln() + max;
            total += log_z - x[base + label as usize * p + i] as f64;
            for (c, e) in prob.iter().enumerate() {
                let onehot = if c == label as usize { 1.0 } else { 0.0 };
                grad[base + c * p + i] = ((e / z - onehot) * inv) as f32;
            }
        }
    }
    Ok(SemanticLoss {
        loss: total * inv,
        grad: Tensor::new(s, grad)?,
        labeled_pixels: labeled,
    })
}

/// Region-branch loss inputs for `R` sampled RoIs of which `R_fg` are
/// foreground. Row-major flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLossInputs {
    /// `K + 1` columns: background plus `K` thing classes.
    pub num_labels: usize,
    /// `R * (K + 1)` logits.
    pub class_logits: Vec<f32>,
    /// `R` labels, 0 = background.
    pub class_targets: Vec<usize>,
    /// `R_fg` predicted box deltas.
    pub box_pred: Vec<[f32; 4]>,
    pub box_target: Vec<[f32; 4]>,
    /// Side `M` of the square mask grid.
    pub mask_size: usize,
    /// `R_fg * M * M` logits for the target-class mask.
    pub mask_logits: Vec<f32>,
    /// `R_fg * M * M` binary targets.
    pub mask_targets: Vec<u8>,
}

impl InstanceLossInputs {
    pub fn num_sampled_rois(&self) -> usize {
        self.class_targets.len()
    }

    pub fn num_foreground_rois(&self) -> usize {
        self.box_pred.len()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.num_sampled_rois();
        let fg = self.num_foreground_rois();
        let m2 = self.mask_size * self.mask_size;
        if self.num_labels < 2 {
            return Err(Error::invalid("instance loss needs background plus >= 1 class"));
        }
        if self.class_logits.len() != r * self.num_labels {
            return Err(Error::shape("class_logits", r * self.num_labels, self.class_logits.len()));
        }
        if fg > r {
            return Err(Error::invalid(format!("{fg} foreground RoIs exceed {r} sampled RoIs")));
        }
        if self.box_target.len() != fg {
            return Err(Error::shape("box_target", fg, self.box_target.len()));
        }
        if self.mask_logits.len() != fg * m2 || self.mask_targets.len() != fg * m2 {
            return Err(Error::shape(
                "mask tensors",
                fg * m2,
                format!("{} logits / {} targets", self.mask_logits.len(), self.mask_targets.len()),
            ));
        }
        if let Some(t) = self.class_targets.iter().find(|&&t| t >= self.num_labels) {
            return Err(Error::invalid(format!("class target {t} outside {} labels", self.num_labels)));
        }
        if self.mask_targets.iter().any(|&t| t > 1) {
            return Err(Error::invalid("mask targets must be 0 or 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InstanceLosses {
    pub classification: f64,
    pub box_regression: f64,
    pub mask: f64,
}

impl InstanceLosses {
    pub fn total(&self) -> f64 {
        self.classification + self.box_regression + self.mask
    }
}

/// Gradients of `L_c + L_b + L_m` with respect to the prediction buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGrads {
    pub class_logits: Vec<f32>,
    pub box_pred: Vec<[f32; 4]>,
    pub mask_logits: Vec<f32>,
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

pub fn instance_losses(inputs: &InstanceLossInputs) -> Result<InstanceLosses> {
    instance_losses_with_grad(inputs).map(|(l, _)| l)
}

/// Errors on `R == 0`. `R_fg == 0` gives zero box and mask loss.
pub fn instance_losses_with_grad(inputs: &InstanceLossInputs) -> Result<(InstanceLosses, InstanceGrads)> {
    inputs.validate()?;
    let r = inputs.num_sampled_rois();
    if r == 0 {
        return Err(Error::Degenerate("instance loss with zero sampled RoIs".into()));
    }
    let fg = inputs.num_foreground_rois();
    let k = inputs.num_labels;
    let inv_r = 1.0 / r as f64;

    let mut cls = 0f64;
    let mut g_cls = vec![0f32; r * k];
    for (row, &t) in inputs.class_targets.iter().enumerate() {
        let z = &inputs.class_logits[row * k..(row + 1) * k];
        let max = z.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_z = sum.ln() + max;
        cls += log_z - z[t] as f64;
        for c in 0..k {
            let p = (z[c] as f64 - log_z).exp();
            let onehot = if c == t { 1.0 } else { 0.0 };
            g_cls[row * k + c] = ((p - onehot) * inv_r) as f32;
        }
    }

    let mut bbox = 0f64;
    let mut g_box = vec![[0f32; 4]; fg];
    for (i, (p, t)) in inputs.box_pred.iter().zip(&inputs.box_target).enumerate() {
        for j in 0..4 {
            let d = p[j] as f64 - t[j] as f64;
            bbox += smooth_l1(d);
            g_box[i][j] = (smooth_l1_grad(d) * inv_r) as f32;
        }
    }

    let m2 = inputs.mask_size * inputs.mask_size;
    let mut mask = 0f64;
    let mut g_mask = vec![0f32; fg * m2];
    if fg > 0 {
        let scale = 1.0 / (m2 as f64 * fg as f64);
        for (i, (&z, &t)) in inputs.mask_logits.iter().zip(&inputs.mask_targets).enumerate() {
            let z = z as f64;
            let t = t as f64;
            mask += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            let sig = 1.0 / (1.0 + (-z).exp());
            g_mask[i] = ((sig - t) * scale) as f32;
        }
        mask *= scale;
    }

    Ok((
        InstanceLosses {
            classification: cls * inv_r,
            box_regression: bbox * inv_r,
            mask,
        },
        InstanceGrads {
            class_logits: g_cls,
            box_pred: g_box,
            mask_logits: g_mask,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_i: f64,
    pub lambda_s: f64,
}

impl LossWeights {
    pub fn new(lambda_i: f64, lambda_s: f64) -> Result<Self> {
        let w = LossWeights { lambda_i, lambda_s };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_i", self.lambda_i), ("lambda_s", self.lambda_s)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_i: 1.0,
            lambda_s: 1.0,
        }
    }
}

pub fn joint_loss(instance: &InstanceLosses, semantic: f64, weights: LossWeights) -> f64 {
    weights.lambda_i * instance.total() + weights.lambda_s * semantic
}

/// Gradients of the joint loss: each branch's gradient scaled by its weight.
pub fn joint_gradients(instance: &InstanceGrads, semantic: &Tensor, weights: LossWeights) -> (InstanceGrads, Tensor) {
    let li = weights.lambda_i;
    let scale = |v: &[f32]| v.iter().map(|&g| (g as f64 * li) as f32).collect::<Vec<_>>();
    let inst = InstanceGrads {
        class_logits: scale(&instance.class_logits),
        box_pred: instance
            .box_pred
            .iter()
            .map(|b| b.map(|g| (g as f64 * li) as f32))
            .collect(),
        mask_logits: scale(&instance.mask_logits),
    };
    (inst, semantic.map(|g| (g as f64 * weights.lambda_s) as f32))
}

/// All loss terms for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub instance: InstanceLosses,
    pub semantic: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(instance: InstanceLosses, semantic: f64, weights: LossWeights) -> Self {
        LossBreakdown {
            instance,
            semantic,
            total: joint_loss(&instance, semantic, weights),
        }
    }
}

/// Result of one grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub losses: LossBreakdown,
    /// Named metrics, same names and order for every cell.
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub weights: LossWeights,
    pub outcome: std::result::Result<SweepCell, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// The `{0.5, 0.75, 1.0}^2` grid of `(lambda_i, lambda_s)`.
pub fn default_grid() -> Vec<LossWeights> {
    let vals = [0.5, 0.75, 1.0];
    vals.iter()
        .flat_map(|&li| vals.iter().map(move |&ls| LossWeights { lambda_i: li, lambda_s: ls }))
        .collect()
}

/// Runs `runner` at every grid point in order. A failing cell is recorded
/// and the sweep continues.
pub fn lambda_sweep<F>(grid: &[LossWeights], mut runner: F) -> Result<SweepTable>
where
    F: FnMut(LossWeights) -> Result<SweepCell>,
{
    if grid.is_empty() {
        return Err(Error::invalid("lambda sweep needs a non-empty grid"));
    }
    let rows = grid
        .iter()
        .map(|&weights| SweepRow {
            weights,
            outcome: weights
                .validate()
                .and_then(|_| runner(weights))
                .map_err(|e| e.to_string()),
        })
        .collect();
    Ok(SweepTable { rows })
}

impl SweepTable {
    /// Header `lambda_i,lambda_s,L_c,L_b,L_m,L_s,L,<metrics...>`; failed
    /// cells print `NaN` in every value column.
    pub fn to_csv(&self) -> String {
        let metric_names: Vec<String> = self
            .rows
            .iter()
            .find_map(|r| r.outcome.as_ref().ok())
            .map(|c| c.metrics.iter().map(|(n, _)| n.clone()).collect())
            .unwrap_or_default();
        let mut out = String::from("lambda_i,lambda_s,L_c,L_b,L_m,L_s,L");
        for n in &metric_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.weights.lambda_i, row.weights.lambda_s);
            match &row.outcome {
                Ok(c) => {
                    let l = &c.losses;
                    let _ = write!(
                        out,
                        ",{},{},{},{},{}",
                        l.instance.classification, l.instance.box_regression, l.instance.mask, l.semantic, l.total
                    );
                    for (_, v) in &c.metrics {
                        let _ = write!(out, ",{v}");
                    }
                }
                Err(_) => {
                    for _ in 0..5 + metric_names.len() {
                        out.push_str(",NaN");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn inputs(r: usize, fg: usize) -> InstanceLossInputs {
        InstanceLossInputs {
            num_labels: 3,
            class_logits: vec![0.0; r * 3],
            class_targets: vec![0; r],
            box_pred: vec![[0.0; 4]; fg],
            box_target: vec![[0.0; 4]; fg],
            mask_size: 2,
            mask_logits: vec![0.0; fg * 4],
            mask_targets: vec![0; fg * 4],
        }
    }

    #[test]
    fn perfect_one_hot_gives_zero_semantic_loss() {
        let logits = Tensor::from_fn(Shape::new(1, 3, 2, 2), |_, c, y, _| if c == y { 200.0 } else { -200.0 });
        let t = SemanticTarget::new(1, 2, 2, vec![0, 0, 1, 1]).unwrap();
        assert!(semantic_loss(&logits, &t).unwrap().loss.abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 5, 54] {
            let logits = Tensor::full(Shape::new(1, k, 3, 3), 0.3);
            let labels = (0..9).map(|i| (i % k) as u32).collect();
            let t = SemanticTarget::new(1, 3, 3, labels).unwrap();
            assert!((semantic_loss(&logits, &t).unwrap().loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn all_ignored_is_degenerate() {
        let logits = Tensor::zeros(Shape::new(1, 2, 1, 2));
        let t = SemanticTarget::new(1, 1, 2, vec![IGNORE_LABEL; 2]).unwrap();
        assert!(matches!(semantic_loss(&logits, &t), Err(Error::Degenerate(_))));
        let bad = SemanticTarget::new(1, 1, 2, vec![0, 7]).unwrap();
        assert!(semantic_loss(&logits, &bad).is_err());
    }

    #[test]
    fn ignored_pixels_get_zero_gradient() {
        let logits = Tensor::from_fn(Shape::new(1, 2, 1, 3), |_, c, _, x| (c + x) as f32);
        let t = SemanticTarget::new(1, 1, 3, vec![0, IGNORE_LABEL, 1]).unwrap();
        let l = semantic_loss(&logits, &t).unwrap();
        assert_eq!(l.labeled_pixels, 2);
        assert_eq!(l.grad.at(0, 0, 0, 1), 0.0);
        assert_eq!(l.grad.at(0, 1, 0, 1), 0.0);
    }

    #[test]
    fn perfect_classification_is_near_zero() {
        let mut i = inputs(4, 0);
        i.class_targets = vec![0, 1, 2, 1];
        for (row, &t) in i.class_targets.clone().iter().enumerate() {
            i.class_logits[row * 3 + t] = 50.0;
        }
        assert!(instance_losses(&i).unwrap().classification < 1e-12);
    }

    #[test]
    fn smooth_l1_half_unit_error() {
        let mut i = inputs(8, 3);
        assert_eq!(instance_losses(&i).unwrap().box_regression, 0.0);
        i.box_pred[1][2] = 0.5;
        let l = instance_losses(&i).unwrap();
        assert!((l.box_regression - 0.5 * 0.25 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn zero_rois_error_and_zero_foreground_convention() {
        assert!(matches!(instance_losses(&inputs(0, 0)), Err(Error::Degenerate(_))));
        let l = instance_losses(&inputs(5, 0)).unwrap();
        assert_eq!((l.box_regression, l.mask), (0.0, 0.0));
        assert!((l.classification - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_instance_inputs_are_rejected() {
        let mut i = inputs(2, 3);
        assert!(instance_losses(&i).is_err());
        i = inputs(2, 1);
        i.mask_targets[0] = 2;
        assert!(instance_losses(&i).is_err());
        i = inputs(2, 1);
        i.class_targets[0] = 3;
        assert!(instance_losses(&i).is_err());
    }

    #[test]
    fn joint_loss_arithmetic() {
        let inst = InstanceLosses {
            classification: 1.0,
            box_regression: 1.0,
            mask: 1.0,
        };
        assert_eq!(joint_loss(&inst, 2.0, LossWeights::new(0.5, 0.25).unwrap()), 2.0);
        assert_eq!(joint_loss(&inst, 2.0, LossWeights::new(1.0, 0.0).unwrap()), 3.0);
        assert_eq!(joint_loss(&inst, 2.0, LossWeights::new(0.0, 1.0).unwrap()), 2.0);
        assert!(LossWeights::new(f64::NAN, 1.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn sweep_records_failures_and_keeps_going() {
        let grid = default_grid();
        assert_eq!(grid.len(), 9);
        let table = lambda_sweep(&grid, |w| {
            if w.lambda_i == 0.75 {
                return Err(Error::Degenerate("boom".into()));
            }
            Ok(SweepCell {
                losses: LossBreakdown::new(InstanceLosses::default(), 1.0, w),
                metrics: vec![("miou".into(), 50.0)],
            })
        })
        .unwrap();
        assert_eq!(table.rows.len(), 9);
        assert_eq!(table.rows.iter().filter(|r| r.outcome.is_err()).count(), 3);
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "lambda_i,lambda_s,L_c,L_b,L_m,L_s,L,miou");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[1], "0.5,0.5,0,0,0,1,0.5,50");
        assert!(lines[4].ends_with("NaN"));
        assert!(lambda_sweep(&[], |_| unreachable!()).is_err());
    }
}
