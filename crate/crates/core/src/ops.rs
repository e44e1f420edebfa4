//! Forward and backward kernels for the seven operator families of the
//! semantic branch: convolution, group norm, ReLU, bilinear upsampling,
//! elementwise sum, channel concatenation and channel softmax.
//!
//! Kernels are single-threaded and deterministic. Reductions inside group
//! norm and softmax accumulate in `f64`.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_GN_EPS: f32 = 1e-5;
pub const DEFAULT_GN_GROUPS: usize = 32;

/// Spatial hyper-parameters of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    /// Stride 1 with "same" padding for a `k`x`k` kernel at dilation 1.
    pub fn same(kernel: usize) -> Self {
        ConvGeometry {
            stride: 1,
            padding: (kernel - 1) / 2,
            dilation: 1,
        }
    }

    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = (kernel - 1) * self.dilation + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || span > padded {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `(c_out, c_in, k, k)`
    pub weight: Tensor,
    /// `(c_out, 1, 1, 1)`
    pub bias: Tensor,
    pub geometry: ConvGeometry,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Tensor, geometry: ConvGeometry) -> Result<Self> {
        let ws = weight.shape();
        if ws.h != ws.w || !(ws.h == 1 || ws.h == 3) {
            return Err(Error::invalid(format!(
                "conv kernel must be 1x1 or 3x3, got {}x{}",
                ws.h, ws.w
            )));
        }
        if bias.shape() != Shape::new(ws.n, 1, 1, 1) {
            return Err(Error::shape("conv2d bias", Shape::new(ws.n, 1, 1, 1), bias.shape()));
        }
        if geometry.stride == 0 || geometry.dilation == 0 {
            return Err(Error::invalid("conv stride and dilation must be positive"));
        }
        Ok(ConvParams {
            weight,
            bias,
            geometry,
        })
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNormParams {
    pub groups: usize,
    /// `(c, 1, 1, 1)`
    pub gamma: Tensor,
    /// `(c, 1, 1, 1)`
    pub beta: Tensor,
    pub eps: f32,
}

impl GroupNormParams {
    pub fn new(groups: usize, gamma: Tensor, beta: Tensor, eps: f32) -> Result<Self> {
        let c = gamma.shape().n;
        if gamma.shape() != beta.shape() || gamma.shape() != Shape::new(c, 1, 1, 1) {
            return Err(Error::shape("group_norm affine", gamma.shape(), beta.shape()));
        }
        if groups == 0 || c % groups != 0 {
            return Err(Error::invalid(format!(
                "{c} channels not divisible into {groups} groups"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("group norm epsilon must be positive"));
        }
        Ok(GroupNormParams {
            groups,
            gamma,
            beta,
            eps,
        })
    }

    /// Identity affine (`gamma = 1`, `beta = 0`).
    pub fn identity(channels: usize, groups: usize) -> Result<Self> {
        Self::new(
            groups,
            Tensor::full(Shape::new(channels, 1, 1, 1), 1.0),
            Tensor::zeros(Shape::new(channels, 1, 1, 1)),
            DEFAULT_GN_EPS,
        )
    }
}

fn conv_check(input: Shape, weight: Shape, bias: Shape, geom: ConvGeometry) -> Result<Shape> {
    if input.c != weight.c {
        return Err(Error::shape(
            "conv2d",
            format!("input with {} channels for weight {weight}", weight.c),
            input,
        ));
    }
    if bias != Shape::new(weight.n, 1, 1, 1) {
        return Err(Error::shape("conv2d bias", Shape::new(weight.n, 1, 1, 1), bias));
    }
    let oh = geom.output_extent(input.h, weight.h);
    let ow = geom.output_extent(input.w, weight.w);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Shape::new(input.n, weight.n, oh, ow)),
        _ => Err(Error::shape(
            "conv2d",
            format!(
                "receptive span {} within padded input",
                (weight.h - 1) * geom.dilation + 1
            ),
            input,
        )),
    }
}

/// Valid output index range `[lo, hi)` along one axis for kernel tap `t`.
#[inline]
fn tap_range(out_len: usize, in_len: usize, tap: usize, g: ConvGeometry) -> (usize, usize) {
    // in = o * stride + tap * dilation - padding must lie in [0, in_len)
    let off = (tap * g.dilation) as isize - g.padding as isize;
    let s = g.stride as isize;
    let mut lo = 0isize;
    if off < 0 {
        lo = (-off + s - 1) / s;
    }
    let last = in_len as isize - 1 - off;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len as isize) };
    (lo.max(0) as usize, hi.max(lo.max(0)) as usize)
}

pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    conv2d_raw(input, &params.weight, &params.bias, params.geometry)
}

pub(crate) fn conv2d_raw(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    g: ConvGeometry,
) -> Result<Tensor> {
    let is = input.shape();
    let ws = weight.shape();
    let os = conv_check(is, ws, bias.shape(), g)?;
    let k = ws.h;
    let mut out = Vec::with_capacity(os.numel());
    let mut acc = vec![0f64; os.plane()];
    let x = input.data();
    let wd = weight.data();
    for n in 0..is.n {
        for oc in 0..os.c {
            acc.fill(bias.data()[oc] as f64);
            for ic in 0..is.c {
                let iplane = &x[is.offset(n, ic, 0, 0)..][..is.plane()];
                for ky in 0..k {
                    let (oy0, oy1) = tap_range(os.h, is.h, ky, g);
                    for kx in 0..k {
                        let wv = wd[((oc * ws.c + ic) * k + ky) * k + kx] as f64;
                        let (ox0, ox1) = tap_range(os.w, is.w, kx, g);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky * g.dilation - g.padding;
                            let irow = &iplane[iy * is.w..(iy + 1) * is.w];
                            let orow = &mut acc[oy * os.w..(oy + 1) * os.w];
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx * g.dilation - g.padding;
                                orow[ox] += wv * irow[ix] as f64;
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&v| v as f32));
        }
    }
    Tensor::new(os, out)
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    g: ConvGeometry,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let is = input.shape();
    let ws = weight.shape();
    let os = grad_out.shape();
    let k = ws.h;
    let x = input.data();
    let wd = weight.data();
    let go = grad_out.data();
    let mut gx = vec![0f64; is.numel()];
    let mut gw = vec![0f64; ws.numel()];
    let mut gb = vec![0f64; ws.n];
    for n in 0..is.n {
        for oc in 0..os.c {
            let gplane = &go[os.offset(n, oc, 0, 0)..][..os.plane()];
            gb[oc] += gplane.iter().map(|&v| v as f64).sum::<f64>();
            for ic in 0..is.c {
                let ibase = is.offset(n, ic, 0, 0);
                for ky in 0..k {
                    let (oy0, oy1) = tap_range(os.h, is.h, ky, g);
                    for kx in 0..k {
                        let widx = ((oc * ws.c + ic) * k + ky) * k + kx;
                        let wv = wd[widx] as f64;
                        let (ox0, ox1) = tap_range(os.w, is.w, kx, g);
                        let mut acc = 0f64;
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky * g.dilation - g.padding;
                            let grow = &gplane[oy * os.w..(oy + 1) * os.w];
                            let rbase = ibase + iy * is.w;
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx * g.dilation - g.padding;
                                let gv = grow[ox] as f64;
                                acc += gv * x[rbase + ix] as f64;
                                gx[rbase + ix] += wv * gv;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::new(is, gx.into_iter().map(|v| v as f32).collect()).expect("input grad shape"),
        Tensor::new(ws, gw.into_iter().map(|v| v as f32).collect()).expect("weight grad shape"),
        Tensor::new(Shape::new(ws.n, 1, 1, 1), gb.into_iter().map(|v| v as f32).collect())
            .expect("bias grad shape"),
    )
}

/// Per (sample, group) `(mean, 1/sqrt(var + eps))`, population variance.
pub(crate) fn group_stats(input: &Tensor, groups: usize, eps: f32) -> Vec<(f64, f64)> {
    let s = input.shape();
    let cg = s.c / groups;
    let len = cg * s.plane();
    let mut stats = Vec::with_capacity(s.n * groups);
    for n in 0..s.n {
        for g in 0..groups {
            let slice = &input.data()[s.offset(n, g * cg, 0, 0)..][..len];
            let mean = slice.iter().map(|&v| v as f64).sum::<f64>() / len as f64;
            let var = slice
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / len as f64;
            stats.push((mean, 1.0 / (var + eps as f64).sqrt()));
        }
    }
    stats
}

fn check_affine(op: &'static str, input: Shape, gamma: &Tensor, beta: &Tensor, groups: usize) -> Result<()> {
    let expect = Shape::new(input.c, 1, 1, 1);
    if gamma.shape() != expect || beta.shape() != expect {
        return Err(Error::shape(op, expect, gamma.shape()));
    }
    if groups == 0 || input.c % groups != 0 {
        return Err(Error::invalid(format!(
            "{op}: {} channels not divisible into {groups} groups",
            input.c
        )));
    }
    Ok(())
}

pub fn group_norm(input: &Tensor, params: &GroupNormParams) -> Result<Tensor> {
    group_norm_raw(input, &params.gamma, &params.beta, params.groups, params.eps).map(|(t, _)| t)
}

pub(crate) fn group_norm_raw(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: usize,
    eps: f32,
) -> Result<(Tensor, Vec<(f64, f64)>)> {
    let s = input.shape();
    check_affine("group_norm", s, gamma, beta, groups)?;
    let stats = group_stats(input, groups, eps);
    let cg = s.c / groups;
    let mut out = vec![0f32; s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let (mean, inv) = stats[n * groups + c / cg];
            let (ga, be) = (gamma.data()[c] as f64, beta.data()[c] as f64);
            let base = s.offset(n, c, 0, 0);
            for i in base..base + s.plane() {
                out[i] = (ga * (input.data()[i] as f64 - mean) * inv + be) as f32;
            }
        }
    }
    Ok((Tensor::new(s, out)?, stats))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub(crate) fn group_norm_backward(
    input: &Tensor,
    gamma: &Tensor,
    groups: usize,
    stats: &[(f64, f64)],
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let s = input.shape();
    let cg = s.c / groups;
    let p = s.plane();
    let m = (cg * p) as f64;
    let x = input.data();
    let go = grad_out.data();
    let mut gx = vec![0f32; s.numel()];
    let mut ggamma = vec![0f64; s.c];
    let mut gbeta = vec![0f64; s.c];
    for n in 0..s.n {
        for g in 0..groups {
            let (mean, inv) = stats[n * groups + g];
            let mut sum_dxhat = 0f64;
            let mut sum_dxhat_xhat = 0f64;
            for c in g * cg..(g + 1) * cg {
                let ga = gamma.data()[c] as f64;
                let base = s.offset(n, c, 0, 0);
                for i in base..base + p {
                    let xhat = (x[i] as f64 - mean) * inv;
                    let dy = go[i] as f64;
                    ggamma[c] += dy * xhat;
                    gbeta[c] += dy;
                    sum_dxhat += dy * ga;
                    sum_dxhat_xhat += dy * ga * xhat;
                }
            }
            for c in g * cg..(g + 1) * cg {
                let ga = gamma.data()[c] as f64;
                let base = s.offset(n, c, 0, 0);
                for i in base..base + p {
                    let xhat = (x[i] as f64 - mean) * inv;
                    let dxhat = go[i] as f64 * ga;
                    gx[i] = (inv / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)) as f32;
                }
            }
        }
    }
    let affine = Shape::new(s.c, 1, 1, 1);
    (
        Tensor::new(s, gx).expect("gn grad"),
        Tensor::new(affine, ggamma.into_iter().map(|v| v as f32).collect()).expect("gamma grad"),
        Tensor::new(affine, gbeta.into_iter().map(|v| v as f32).collect()).expect("beta grad"),
    )
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

pub(crate) fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data).expect("relu grad")
}

/// Two-tap linear interpolation weights along one axis for half-pixel
/// centres: `src = (dst + 0.5) / factor - 0.5`, clamped to `[0, len - 1]`.
#[derive(Debug, Clone, Copy)]
struct Taps {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(len: usize, factor: usize) -> Vec<Taps> {
    (0..len * factor)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            Taps {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

fn check_factor(factor: usize) -> Result<()> {
    if factor == 2 || factor == 4 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "bilinear upsample supports factors 2 and 4, got {factor}"
        )))
    }
}

pub fn bilinear_upsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    check_factor(factor)?;
    let s = input.shape();
    let os = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let ty = axis_taps(s.h, factor);
    let tx = axis_taps(s.w, factor);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for t in &ty {
                let r0 = &plane[t.lo * s.w..(t.lo + 1) * s.w];
                let r1 = &plane[t.hi * s.w..(t.hi + 1) * s.w];
                for u in &tx {
                    let (a, b) = (r0[u.lo] as f64, r0[u.hi] as f64);
                    let (c, d) = (r1[u.lo] as f64, r1[u.hi] as f64);
                    let top = a + (b - a) * u.frac;
                    let bot = c + (d - c) * u.frac;
                    out.push((top + (bot - top) * t.frac) as f32);
                }
            }
        }
    }
    Tensor::new(os, out)
}

pub(crate) fn bilinear_upsample_backward(input: Shape, factor: usize, grad_out: &Tensor) -> Tensor {
    let ty = axis_taps(input.h, factor);
    let tx = axis_taps(input.w, factor);
    let os = grad_out.shape();
    let mut gx = vec![0f64; input.numel()];
    for n in 0..input.n {
        for c in 0..input.c {
            let base = input.offset(n, c, 0, 0);
            let g = &grad_out.data()[os.offset(n, c, 0, 0)..][..os.plane()];
            for (oy, t) in ty.iter().enumerate() {
                for (ox, u) in tx.iter().enumerate() {
                    let v = g[oy * os.w + ox] as f64;
                    let top = v * (1.0 - t.frac);
                    let bot = v * t.frac;
                    gx[base + t.lo * input.w + u.lo] += top * (1.0 - u.frac);
                    gx[base + t.lo * input.w + u.hi] += top * u.frac;
                    gx[base + t.hi * input.w + u.lo] += bot * (1.0 - u.frac);
                    gx[base + t.hi * input.w + u.hi] += bot * u.frac;
                }
            }
        }
    }
    Tensor::new(input, gx.into_iter().map(|v| v as f32).collect()).expect("upsample grad")
}

pub fn elementwise_sum(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("elementwise_sum of an empty list"))?;
    let mut acc = (*first).clone();
    for t in &inputs[1..] {
        if t.shape() != acc.shape() {
            return Err(Error::shape("elementwise_sum", acc.shape(), t.shape()));
        }
        acc.add_assign(t)?;
    }
    Ok(acc)
}

pub fn channel_concat(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("channel_concat of an empty list"))?
        .shape();
    for t in inputs {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("channel_concat", first, s));
        }
    }
    let c: usize = inputs.iter().map(|t| t.shape().c).sum();
    let os = Shape::new(first.n, c, first.h, first.w);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..first.n {
        for t in inputs {
            let s = t.shape();
            out.extend_from_slice(&t.data()[s.offset(n, 0, 0, 0)..][..s.c * s.plane()]);
        }
    }
    Tensor::new(os, out)
}

pub fn softmax_channels(input: &Tensor) -> Tensor {
    let s = input.shape();
    let p = s.plane();
    let x = input.data();
    let mut out = vec![0f32; s.numel()];
    let mut exps = vec![0f64; s.c];
    for n in 0..s.n {
        let base = s.offset(n, 0, 0, 0);
        for i in 0..p {
            let max = (0..s.c)
                .map(|c| x[base + c * p + i])
                .fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut total = 0f64;
            for (c, e) in exps.iter_mut().enumerate() {
                *e = (x[base + c * p + i] as f64 - max).exp();
                total += *e;
            }
            for (c, e) in exps.iter().enumerate() {
                out[base + c * p + i] = (e / total) as f32;
            }
        }
    }
    Tensor::new(s, out).expect("softmax shape")
}

/// `dx = y * (dy - sum_c y * dy)` per pixel.
pub(crate) fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let s = output.shape();
    let p = s.plane();
    let y = output.data();
    let g = grad_out.data();
    let mut gx = vec![0f32; s.numel()];
    for n in 0..s.n {
        let base = s.offset(n, 0, 0, 0);
        for i in 0..p {
            let dot: f64 = (0..s.c)
                .map(|c| y[base + c * p + i] as f64 * g[base + c * p + i] as f64)
                .sum();
            for c in 0..s.c {
                let j = base + c * p + i;
                gx[j] = (y[j] as f64 * (g[j] as f64 - dot)) as f32;
            }
        }
    }
    Tensor::new(s, gx).expect("softmax grad")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn box_sum_identity() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let p = ConvParams::new(
            Tensor::full(Shape::new(1, 1, 3, 3), 1.0),
            Tensor::zeros(Shape::new(1, 1, 1, 1)),
            ConvGeometry::same(3),
        )
        .unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, r, c), 4.0);
        }
    }

    #[test]
    fn dilated_output_extent_follows_formula() {
        let x = Tensor::full(Shape::new(1, 1, 5, 5), 1.0);
        let g = ConvGeometry {
            stride: 1,
            padding: 1,
            dilation: 2,
        };
        let p = ConvParams::new(
            Tensor::full(Shape::new(1, 1, 3, 3), 1.0),
            Tensor::zeros(Shape::new(1, 1, 1, 1)),
            g,
        )
        .unwrap();
        assert_eq!(conv2d(&x, &p).unwrap().shape(), Shape::new(1, 1, 3, 3));
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_oversized_span() {
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let p = ConvParams::new(
            Tensor::zeros(Shape::new(1, 3, 3, 3)),
            Tensor::zeros(Shape::new(1, 1, 1, 1)),
            ConvGeometry::same(3),
        )
        .unwrap();
        let err = conv2d(&x, &p).unwrap_err().to_string();
        assert!(err.contains("(1, 2, 4, 4)") && err.contains("(1, 3, 3, 3)"), "{err}");

        let tiny = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let wide = ConvParams::new(
            Tensor::zeros(Shape::new(1, 1, 3, 3)),
            Tensor::zeros(Shape::new(1, 1, 1, 1)),
            ConvGeometry {
                stride: 1,
                padding: 0,
                dilation: 2,
            },
        )
        .unwrap();
        assert!(conv2d(&tiny, &wide).is_err());
        assert!(ConvParams::new(
            Tensor::zeros(Shape::new(1, 1, 5, 5)),
            Tensor::zeros(Shape::new(1, 1, 1, 1)),
            ConvGeometry::same(5)
        )
        .is_err());
    }

    #[test]
    fn group_norm_constant_input_maps_to_beta() {
        let x = Tensor::full(Shape::new(1, 4, 3, 3), 2.5);
        let p = GroupNormParams::identity(4, 2).unwrap();
        let y = group_norm(&x, &p).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn group_norm_rejects_indivisible_groups() {
        assert!(GroupNormParams::identity(6, 4).is_err());
        let x = Tensor::zeros(Shape::new(1, 6, 2, 2));
        let p = GroupNormParams::identity(8, 4).unwrap();
        assert!(group_norm(&x, &p).is_err());
    }

    #[test]
    fn relu_examples() {
        let x = t(Shape::new(1, 1, 1, 3), &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(Shape::new(1, 2, 2, 2), -3.0);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_half_pixel_row() {
        let x = t(Shape::new(1, 1, 1, 2), &[0.0, 1.0]);
        let y = bilinear_upsample(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 4));
        assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(&y.data()[4..], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bilinear_rejects_factor_three() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(bilinear_upsample(&x, 3).is_err());
    }

    #[test]
    fn bilinear_gradient_mass_equals_output_pixels() {
        let s = Shape::new(1, 2, 3, 5);
        for f in [2, 4] {
            let ones = Tensor::full(Shape::new(1, 2, 3 * f, 5 * f), 1.0);
            let g = bilinear_upsample_backward(s, f, &ones);
            assert!((g.sum() - ones.sum()).abs() < 1e-3);
        }
    }

    #[test]
    fn sum_and_concat_edge_cases() {
        let a = t(Shape::new(1, 1, 1, 2), &[1.0, -2.0]);
        let neg = a.scale(-1.0);
        assert_eq!(elementwise_sum(&[&a]).unwrap(), a);
        assert!(elementwise_sum(&[&a, &neg]).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(elementwise_sum(&[]).is_err());
        let b = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(elementwise_sum(&[&a, &b]).is_err());
        assert!(channel_concat(&[&a, &b]).is_err());
        assert_eq!(channel_concat(&[&a]).unwrap(), a);
    }

    #[test]
    fn softmax_examples() {
        let one = t(Shape::new(1, 1, 1, 2), &[3.0, -7.0]);
        assert_eq!(softmax_channels(&one).data(), &[1.0, 1.0]);
        let two = t(Shape::new(1, 2, 1, 1), &[0.0, 0.0]);
        assert_eq!(softmax_channels(&two).data(), &[0.5, 0.5]);
        let big = t(Shape::new(1, 3, 1, 1), &[1000.0, 1000.0, 1000.0]);
        for v in softmax_channels(&big).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }
}
