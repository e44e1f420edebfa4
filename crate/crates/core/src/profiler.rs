//! Analytic multiply-add and activation counts for backbone + decoder
//! networks.
//!
//! Only convolutions cost anything: a conv producing an `h x w x c_out` map
//! from `c_in` channels with a `k x k` kernel costs `h w c_out c_in k^2`
//! multiply-adds and `h w c_out` activations. Pooling, normalisation,
//! nonlinearities, upsampling and sums are free. Padding is always
//! `dilation (k - 1) / 2`, so the output extent is
//! `floor((x + 2p - dilation (k - 1) - 1) / stride) + 1`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kvconfig;
use crate::semantic_branch::{BranchConfig, LEVEL_STRIDES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum LayerKind {
    Conv {
        kernel: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        dilation: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Upsample {
        factor: usize,
    },
    /// Elementwise sum with another layer's output.
    Sum {
        with: usize,
    },
    /// Channel concatenation with further layers' outputs.
    Concat {
        with: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSource {
    Previous,
    Input,
    Layer(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub source: LayerSource,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, kernel: usize, c_in: usize, c_out: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv {
                kernel,
                c_in,
                c_out,
                stride,
                dilation: 1,
            },
            source: LayerSource::Previous,
        }
    }

    pub fn from(mut self, source: LayerSource) -> Self {
        self.source = source;
        self
    }

    fn other(name: impl Into<String>, kind: LayerKind, source: LayerSource) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            source,
        }
    }

    /// Weight count of a conv (bias excluded); 0 for other layers.
    pub fn parameters(&self) -> u64 {
        match self.kind {
            LayerKind::Conv { kernel, c_in, c_out, .. } => (kernel * kernel * c_in * c_out) as u64,
            _ => 0,
        }
    }
}

/// A backbone stage: its output layer and number of residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Stage {
    pub output: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Decoder {
    None,
    /// Backbone strides removed beyond `output_scale` (8 or 16).
    Dilated { output_scale: usize },
    SymmetricDecoder,
    Fpn {
        channel_dim: usize,
        #[serde(skip)]
        semantic_head: Option<BranchConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchSpec {
    pub name: String,
    pub input_channels: usize,
    pub backbone: Vec<LayerSpec>,
    /// Finest first; needed by the FPN and symmetric decoders.
    pub stages: Vec<Stage>,
    pub decoder: Decoder,
}

fn bottleneck(
    layers: &mut Vec<LayerSpec>,
    name: &str,
    input: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
    project: bool,
) -> usize {
    let mid = c_out / 4;
    let mut push = |l: LayerSpec| {
        layers.push(l);
        layers.len() - 1
    };
    push(LayerSpec::conv(format!("{name}.conv1"), 1, c_in, mid, 1).from(LayerSource::Layer(input)));
    push(LayerSpec::conv(format!("{name}.conv2"), 3, mid, mid, stride));
    let main = push(LayerSpec::conv(format!("{name}.conv3"), 1, mid, c_out, 1));
    let shortcut = if project {
        push(LayerSpec::conv(format!("{name}.proj"), 1, c_in, c_out, stride).from(LayerSource::Layer(input)))
    } else {
        input
    };
    push(LayerSpec::other(
        format!("{name}.add"),
        LayerKind::Sum { with: shortcut },
        LayerSource::Layer(main),
    ))
}

pub const RESNET101_BLOCKS: [usize; 4] = [3, 4, 23, 3];
pub const RESNET_CHANNELS: [usize; 4] = [256, 512, 1024, 2048];

/// ResNet-101 with the stride of each downsampling block on its 3x3 conv.
pub fn resnet101() -> ArchSpec {
    resnet(&RESNET101_BLOCKS, "resnet101")
}

pub fn resnet(blocks: &[usize; 4], name: &str) -> ArchSpec {
    let mut layers = vec![
        LayerSpec::conv("stem", 7, 3, 64, 2).from(LayerSource::Input),
        LayerSpec::other("pool", LayerKind::MaxPool { kernel: 3, stride: 2 }, LayerSource::Previous),
    ];
    let mut stages = Vec::new();
    let (mut last, mut c_in) = (1, 64);
    for (s, (&n, &c)) in blocks.iter().zip(&RESNET_CHANNELS).enumerate() {
        for b in 0..n {
            let stride = if b == 0 && s > 0 { 2 } else { 1 };
            last = bottleneck(&mut layers, &format!("res{}.{b}", s + 2), last, c_in, c, stride, b == 0);
            c_in = c;
        }
        stages.push(Stage { output: last, blocks: n });
    }
    ArchSpec {
        name: name.into(),
        input_channels: 3,
        backbone: layers,
        stages,
        decoder: Decoder::None,
    }
}

impl ArchSpec {
    pub fn with_decoder(mut self, decoder: Decoder, name: impl Into<String>) -> Self {
        self.decoder = decoder;
        self.name = name.into();
        self
    }

    /// Full layer list: the (possibly dilated) backbone then the decoder.
    pub fn expand(&self) -> Result<Vec<LayerSpec>> {
        let out_channels = resolve_channels(&self.backbone, self.input_channels)?;
        for s in &self.stages {
            if s.output >= self.backbone.len() {
                return Err(Error::invalid(format!("stage output {} is not a backbone layer", s.output)));
            }
        }
        let mut layers = self.backbone.clone();
        let stage_channels = |i: usize| out_channels[self.stages[i].output];
        match &self.decoder {
            Decoder::None => {}
            Decoder::Dilated { output_scale } => layers = dilate(&layers, *output_scale)?,
            Decoder::Fpn {
                channel_dim,
                semantic_head,
            } => {
                self.require_stages(4)?;
                let chans: Vec<usize> = (0..4).map(stage_channels).collect();
                let outputs = fpn_layers(&mut layers, &self.stages, &chans, *channel_dim);
                if let Some(head) = semantic_head {
                    head_layers(&mut layers, &outputs, *channel_dim, head)?;
                }
            }
            Decoder::SymmetricDecoder => {
                self.require_stages(4)?;
                let chans: Vec<usize> = (0..4).map(stage_channels).collect();
                symmetric_layers(&mut layers, &self.stages, &chans);
            }
        }
        Ok(layers)
    }

    fn require_stages(&self, n: usize) -> Result<()> {
        if self.stages.len() != n {
            return Err(Error::invalid(format!(
                "decoder needs {n} marked backbone stages, spec `{}` has {}",
                self.name,
                self.stages.len()
            )));
        }
        Ok(())
    }
}

fn source_index(layers: &[LayerSpec], i: usize) -> Option<usize> {
    match layers[i].source {
        LayerSource::Previous => i.checked_sub(1),
        LayerSource::Input => None,
        LayerSource::Layer(j) => Some(j),
    }
}

/// Output channels per layer; errors on inconsistent chains.
fn resolve_channels(layers: &[LayerSpec], input_channels: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let src = match source_index(layers, i) {
            Some(j) if j >= i => {
                return Err(Error::invalid(format!("layer {} reads a later layer {j}", l.name)));
            }
            Some(j) => out[j],
            None => input_channels,
        };
        let c = match l.kind {
            LayerKind::Conv { c_in, c_out, .. } => {
                if c_in != src {
                    return Err(Error::invalid(format!("layer {}: c_in {c_in} but input has {src} channels", l.name)));
                }
                c_out
            }
            LayerKind::Concat { ref with } => {
                let mut c = src;
                for &j in with {
                    if j >= i {
                        return Err(Error::invalid(format!("layer {} concatenates a later layer {j}", l.name)));
                    }
                    c += out[j];
                }
                c
            }
            LayerKind::Sum { with } => {
                if with >= i {
                    return Err(Error::invalid(format!("layer {} sums with a later layer {with}", l.name)));
                }
                if out[with] != src {
                    return Err(Error::invalid(format!(
                        "layer {}: summing {src} and {} channels",
                        l.name, out[with]
                    )));
                }
                src
            }
            _ => src,
        };
        out.push(c);
    }
    Ok(out)
}

/// Removes strides that would take the output below `1/output_scale` and
/// dilates the following 3x3 convs by the removed factor (Fig. 5b style).
/// Layer and parameter counts are unchanged.
pub fn dilate(layers: &[LayerSpec], output_scale: usize) -> Result<Vec<LayerSpec>> {
    if !output_scale.is_power_of_two() || output_scale == 0 {
        return Err(Error::invalid(format!("dilation output scale {output_scale} must be a power of two")));
    }
    // nominal scale of each layer's output in the undilated network
    let mut scale: Vec<usize> = Vec::with_capacity(layers.len());
    let mut out = layers.to_vec();
    for (i, l) in layers.iter().enumerate() {
        let in_scale = source_index(layers, i).map_or(1, |j| scale[j]);
        let s = match l.kind {
            LayerKind::Conv { stride, .. } | LayerKind::MaxPool { stride, .. } => in_scale * stride,
            LayerKind::Upsample { factor } => (in_scale / factor).max(1),
            LayerKind::Sum { .. } | LayerKind::Concat { .. } => in_scale,
        };
        scale.push(s);
        if let LayerKind::Conv {
            kernel,
            ref mut stride,
            ref mut dilation,
            ..
        } = out[i].kind
        {
            if in_scale * *stride > output_scale {
                *stride = 1;
            }
            if kernel > 1 && in_scale > output_scale {
                *dilation *= in_scale / output_scale;
            }
        } else if let LayerKind::MaxPool { ref mut stride, .. } = out[i].kind {
            if in_scale * *stride > output_scale {
                *stride = 1;
            }
        }
    }
    Ok(out)
}

fn push(layers: &mut Vec<LayerSpec>, l: LayerSpec) -> usize {
    layers.push(l);
    layers.len() - 1
}

/// Lateral 1x1 convs, top-down 2x upsample + sum, 3x3 output conv per level.
/// Returns the output layer per level, finest first.
fn fpn_layers(layers: &mut Vec<LayerSpec>, stages: &[Stage], chans: &[usize], dim: usize) -> Vec<usize> {
    let mut merged = vec![0; 4];
    for k in (0..4).rev() {
        let s = LEVEL_STRIDES[k];
        let lat = push(
            layers,
            LayerSpec::conv(format!("fpn.lateral{s}"), 1, chans[k], dim, 1).from(LayerSource::Layer(stages[k].output)),
        );
        merged[k] = if k == 3 {
            lat
        } else {
            let up = push(
                layers,
                LayerSpec::other(format!("fpn.up{s}"), LayerKind::Upsample { factor: 2 }, LayerSource::Layer(merged[k + 1])),
            );
            push(
                layers,
                LayerSpec::other(format!("fpn.merge{s}"), LayerKind::Sum { with: lat }, LayerSource::Layer(up)),
            )
        };
    }
    (0..4)
        .map(|k| {
            let s = LEVEL_STRIDES[k];
            push(
                layers,
                LayerSpec::conv(format!("fpn.output{s}"), 3, dim, dim, 1).from(LayerSource::Layer(merged[k])),
            )
        })
        .collect()
}

fn head_layers(layers: &mut Vec<LayerSpec>, levels: &[usize], dim: usize, cfg: &BranchConfig) -> Result<()> {
    cfg.validate()?;
    let w = cfg.branch_width;
    let mut ends = Vec::new();
    for (k, &lvl) in levels.iter().enumerate() {
        let s = LEVEL_STRIDES[k];
        let mut x = lvl;
        let mut c = dim;
        for j in 0..k.max(1) {
            x = push(
                layers,
                LayerSpec::conv(format!("head.level{s}.stage{j}"), 3, c, w, 1).from(LayerSource::Layer(x)),
            );
            c = w;
            if k > 0 {
                x = push(
                    layers,
                    LayerSpec::other(format!("head.level{s}.up{j}"), LayerKind::Upsample { factor: 2 }, LayerSource::Previous),
                );
            }
        }
        ends.push(x);
    }
    let merged = match cfg.aggregation {
        crate::semantic_branch::Aggregation::Sum => {
            let mut acc = ends[0];
            for (i, &e) in ends.iter().enumerate().skip(1) {
                acc = push(
                    layers,
                    LayerSpec::other(format!("head.sum{i}"), LayerKind::Sum { with: e }, LayerSource::Layer(acc)),
                );
            }
            acc
        }
        crate::semantic_branch::Aggregation::Concat => {
            let cat = push(
                layers,
                LayerSpec::other("head.concat", LayerKind::Concat { with: ends[1..].to_vec() }, LayerSource::Layer(ends[0])),
            );
            push(
                layers,
                LayerSpec::conv("head.fuse", 1, 4 * w, w, 1).from(LayerSource::Layer(cat)),
            )
        }
    };
    push(
        layers,
        LayerSpec::conv("head.classifier", 1, w, cfg.output_channels(), 1).from(LayerSource::Layer(merged)),
    );
    push(
        layers,
        LayerSpec::other("head.up", LayerKind::Upsample { factor: 4 }, LayerSource::Previous),
    );
    Ok(())
}

/// Mirror of the encoder: the 1/32 stage's blocks again at 1/32, then for
/// each finer stage a 2x upsample, that stage's block count at its channel
/// width (the first block projecting from the coarser width), and a sum with
/// the encoder's lateral output.
fn symmetric_layers(layers: &mut Vec<LayerSpec>, stages: &[Stage], chans: &[usize]) {
    let mut x = stages[3].output;
    for b in 0..stages[3].blocks {
        x = bottleneck(layers, &format!("dec5.{b}"), x, chans[3], chans[3], 1, false);
    }
    let mut c = chans[3];
    for k in (0..3).rev() {
        x = push(
            layers,
            LayerSpec::other(format!("dec{}.up", k + 2), LayerKind::Upsample { factor: 2 }, LayerSource::Layer(x)),
        );
        for b in 0..stages[k].blocks {
            x = bottleneck(layers, &format!("dec{}.{b}", k + 2), x, c, chans[k], 1, b == 0);
            c = chans[k];
            if b == 0 {
                x = push(
                    layers,
                    LayerSpec::other(
                        format!("dec{}.lateral", k + 2),
                        LayerKind::Sum { with: stages[k].output },
                        LayerSource::Layer(x),
                    ),
                );
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub op: &'static str,
    /// Output `(channels, height, width)`.
    pub output: [usize; 3],
    pub multiply_adds: u64,
    pub activations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub arch: String,
    pub image: [usize; 2],
    pub batch: usize,
    pub layers: Vec<LayerCost>,
    pub multiply_adds: u64,
    pub activations: u64,
}

fn op_name(k: &LayerKind) -> &'static str {
    match k {
        LayerKind::Conv { .. } => "conv",
        LayerKind::MaxPool { .. } => "maxpool",
        LayerKind::Upsample { .. } => "upsample",
        LayerKind::Sum { .. } => "sum",
        LayerKind::Concat { .. } => "concat",
    }
}

fn conv_extent(x: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let pad = dilation * (kernel - 1) / 2;
    (x + 2 * pad).checked_sub(span).map(|v| v / stride + 1)
}

pub fn profile(spec: &ArchSpec, image: (usize, usize)) -> Result<CostReport> {
    profile_batch(spec, image, 1)
}

pub fn profile_batch(spec: &ArchSpec, image: (usize, usize), batch: usize) -> Result<CostReport> {
    let layers = spec.expand()?;
    resolve_channels(&layers, spec.input_channels)?;
    if batch == 0 || image.0 == 0 || image.1 == 0 {
        return Err(Error::invalid("profile needs a non-empty image and batch"));
    }
    let factor = downsampling(&layers);
    if image.0 % factor != 0 || image.1 % factor != 0 {
        return Err(Error::invalid(format!(
            "image {}x{} must be divisible by {factor} for `{}`",
            image.0, image.1, spec.name
        )));
    }
    let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(layers.len());
    let mut costs = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let [c, h, w] = source_index(&layers, i).map_or([spec.input_channels, image.0, image.1], |j| shapes[j]);
        let bad = |what: &str| Error::invalid(format!("layer {}: {what}", l.name));
        let (out, macs) = match l.kind {
            LayerKind::Conv {
                kernel,
                c_in,
                c_out,
                stride,
                dilation,
            } => {
                if kernel % 2 == 0 || stride == 0 || dilation == 0 {
                    return Err(bad("kernel must be odd, stride and dilation positive"));
                }
                let oh = conv_extent(h, kernel, stride, dilation).ok_or_else(|| bad("input smaller than kernel"))?;
                let ow = conv_extent(w, kernel, stride, dilation).ok_or_else(|| bad("input smaller than kernel"))?;
                ([c_out, oh, ow], (oh * ow * c_out * c_in * kernel * kernel) as u64)
            }
            LayerKind::MaxPool { kernel, stride } => {
                let oh = conv_extent(h, kernel, stride, 1).ok_or_else(|| bad("input smaller than window"))?;
                let ow = conv_extent(w, kernel, stride, 1).ok_or_else(|| bad("input smaller than window"))?;
                ([c, oh, ow], 0)
            }
            LayerKind::Upsample { factor } => ([c, h * factor, w * factor], 0),
            LayerKind::Sum { with } => {
                if shapes[with] != [c, h, w] {
                    return Err(bad(&format!("summing {:?} with {:?}", [c, h, w], shapes[with])));
                }
                ([c, h, w], 0)
            }
            LayerKind::Concat { ref with } => {
                let mut total = c;
                for &j in with {
                    if shapes[j][1..] != [h, w] {
                        return Err(bad(&format!("concatenating {:?} with {:?}", [c, h, w], shapes[j])));
                    }
                    total += shapes[j][0];
                }
                ([total, h, w], 0)
            }
        };
        let acts = if matches!(l.kind, LayerKind::Conv { .. }) {
            (out[0] * out[1] * out[2]) as u64
        } else {
            0
        };
        shapes.push(out);
        costs.push(LayerCost {
            name: l.name.clone(),
            op: op_name(&l.kind),
            output: out,
            multiply_adds: macs * batch as u64,
            activations: acts * batch as u64,
        });
    }
    Ok(CostReport {
        arch: spec.name.clone(),
        image: [image.0, image.1],
        batch,
        multiply_adds: costs.iter().map(|c| c.multiply_adds).sum(),
        activations: costs.iter().map(|c| c.activations).sum(),
        layers: costs,
    })
}

/// Largest cumulative downsampling reached anywhere in the network.
fn downsampling(layers: &[LayerSpec]) -> usize {
    let mut scale: Vec<usize> = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let s = source_index(layers, i).map_or(1, |j| scale[j]);
        scale.push(match l.kind {
            LayerKind::Conv { stride, .. } | LayerKind::MaxPool { stride, .. } => s * stride,
            LayerKind::Upsample { factor } => (s / factor).max(1),
            _ => s,
        });
    }
    scale.into_iter().max().unwrap_or(1)
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,op,channels,height,width,multiply_adds,activations\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                l.name, l.op, l.output[0], l.output[1], l.output[2], l.multiply_adds, l.activations
            );
        }
        let _ = writeln!(out, "total,,,,,{},{}", self.multiply_adds, self.activations);
        out
    }

    /// Summary line plus per-conv rows, aligned.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} @ {}x{} (batch {}): {:.3}e12 multiply-adds, {:.3}e9 activations\n",
            self.arch,
            self.image[0],
            self.image[1],
            self.batch,
            self.multiply_adds as f64 / 1e12,
            self.activations as f64 / 1e9
        );
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "{:<width$}  {:>16}  {:>13}  output", "layer", "multiply_adds", "activations");
        for l in self.layers.iter().filter(|l| l.op == "conv") {
            let _ = writeln!(
                out,
                "{:<width$}  {:>16}  {:>13}  {}x{}x{}",
                l.name, l.multiply_adds, l.activations, l.output[0], l.output[1], l.output[2]
            );
        }
        out
    }
}

/// The semantic head used by the builtin FPN spec (19 classes, no `other`).
pub fn cityscapes_head() -> BranchConfig {
    BranchConfig::new(19, false)
}

pub const BUILTINS: [&str; 5] = ["r101", "r101-fpn", "r101-d8", "r101-d16", "r101-symdec"];

pub fn builtin(name: &str) -> Result<ArchSpec> {
    let base = resnet101();
    Ok(match name {
        "r101" => base,
        "r101-fpn" => base.with_decoder(
            Decoder::Fpn {
                channel_dim: 256,
                semantic_head: Some(cityscapes_head()),
            },
            name,
        ),
        "r101-d8" => base.with_decoder(Decoder::Dilated { output_scale: 8 }, name),
        "r101-d16" => base.with_decoder(Decoder::Dilated { output_scale: 16 }, name),
        "r101-symdec" => base.with_decoder(Decoder::SymmetricDecoder, name),
        _ => {
            return Err(Error::invalid(format!(
                "unknown builtin `{name}`, expected one of {}",
                BUILTINS.join(", ")
            )))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRow {
    pub variant: String,
    pub multiply_adds: u64,
    pub activations: u64,
    pub multiply_adds_vs_fpn: f64,
    pub activations_vs_fpn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub image: [usize; 2],
    pub rows: Vec<VariantRow>,
}

/// Dilation-8, dilation-16, symmetric decoder and FPN (without semantic
/// head) on `base`'s backbone.
pub fn compare_variants(base: &ArchSpec, image: (usize, usize)) -> Result<Comparison> {
    let backbone = base.clone().with_decoder(Decoder::None, base.name.clone());
    let variants = [
        ("dilation-8", Decoder::Dilated { output_scale: 8 }),
        ("dilation-16", Decoder::Dilated { output_scale: 16 }),
        ("symmetric-decoder", Decoder::SymmetricDecoder),
        (
            "fpn",
            Decoder::Fpn {
                channel_dim: 256,
                semantic_head: None,
            },
        ),
    ];
    let reports = variants
        .into_iter()
        .map(|(n, d)| profile(&backbone.clone().with_decoder(d, n), image))
        .collect::<Result<Vec<_>>>()?;
    let fpn = &reports[3];
    let rows = reports
        .iter()
        .map(|r| VariantRow {
            variant: r.arch.clone(),
            multiply_adds: r.multiply_adds,
            activations: r.activations,
            multiply_adds_vs_fpn: r.multiply_adds as f64 / fpn.multiply_adds as f64,
            activations_vs_fpn: r.activations as f64 / fpn.activations as f64,
        })
        .collect();
    Ok(Comparison {
        image: [image.0, image.1],
        rows,
    })
}

impl Comparison {
    pub fn row(&self, variant: &str) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,multiply_adds,activations,multiply_adds_vs_fpn,activations_vs_fpn\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4}",
                r.variant, r.multiply_adds, r.activations, r.multiply_adds_vs_fpn, r.activations_vs_fpn
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<18}  {:>10}  {:>10}  {:>8}  {:>8}\n",
            "variant", "MAdds e12", "acts e9", "MAdds/x", "acts/x"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<18}  {:>10.3}  {:>10.3}  {:>8.2}  {:>8.2}",
                r.variant,
                r.multiply_adds as f64 / 1e12,
                r.activations as f64 / 1e9,
                r.multiply_adds_vs_fpn,
                r.activations_vs_fpn
            );
        }
        let _ = writeln!(out, "(ratios relative to fpn at {}x{})", self.image[0], self.image[1]);
        out
    }
}

/// Parses an architecture file:
///
/// ```text
/// name = tiny
/// input_channels = 3
/// layer = conv name=c1 k=3 cin=3 cout=16 stride=2 dilation=1 from=input
/// layer = maxpool k=3 stride=2
/// layer = upsample factor=2
/// layer = sum with=c1
/// layer = concat with=c1,c2
/// stage = c1 blocks=1
/// decoder = fpn channel_dim=256 head_classes=19
/// ```
///
/// `from` defaults to the previous layer; references are layer names or
/// indices. Decoders: `none`, `dilated scale=8|16`, `symmetric`,
/// `fpn channel_dim=.. [head_classes=.. head_width=.. head_other=true]`.
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let mut spec = ArchSpec {
        name: "custom".into(),
        input_channels: 3,
        backbone: Vec::new(),
        stages: Vec::new(),
        decoder: Decoder::None,
    };
    let bad = |line: usize, msg: String| Error::malformed("architecture spec", format!("line {line}: {msg}"));
    for e in kvconfig::parse(text)? {
        let mut words = e.value.splitn(2, char::is_whitespace);
        let head = words.next().unwrap_or("").to_string();
        let attrs = kvconfig::attributes(words.next().unwrap_or(""))?;
        let get = |k: &str| attrs.iter().find(|(a, _)| *a == k).map(|(_, v)| *v);
        let num = |k: &str, default: Option<usize>| -> Result<usize> {
            match get(k) {
                Some(v) => v.parse().map_err(|_| bad(e.line, format!("`{k}={v}` is not a number"))),
                None => default.ok_or_else(|| bad(e.line, format!("missing `{k}`"))),
            }
        };
        let layer_ref = |r: &str, layers: &[LayerSpec]| -> Result<usize> {
            r.parse::<usize>()
                .ok()
                .filter(|&i| i < layers.len())
                .or_else(|| layers.iter().position(|l| l.name == r))
                .ok_or_else(|| bad(e.line, format!("unknown layer `{r}`")))
        };
        match e.key.as_str() {
            "name" => spec.name = e.value.clone(),
            "input_channels" => spec.input_channels = e.parse_value()?,
            "layer" => {
                let idx = spec.backbone.len();
                let name = get("name").map_or_else(|| format!("layer{idx}"), str::to_string);
                let source = match get("from") {
                    None | Some("prev") => LayerSource::Previous,
                    Some("input") => LayerSource::Input,
                    Some(r) => LayerSource::Layer(layer_ref(r, &spec.backbone)?),
                };
                let kind = match head.as_str() {
                    "conv" => LayerKind::Conv {
                        kernel: num("k", None)?,
                        c_in: num("cin", None)?,
                        c_out: num("cout", None)?,
                        stride: num("stride", Some(1))?,
                        dilation: num("dilation", Some(1))?,
                    },
                    "maxpool" => LayerKind::MaxPool {
                        kernel: num("k", None)?,
                        stride: num("stride", Some(1))?,
                    },
                    "upsample" => LayerKind::Upsample {
                        factor: num("factor", Some(2))?,
                    },
                    "sum" => LayerKind::Sum {
                        with: layer_ref(get("with").ok_or_else(|| bad(e.line, "sum needs `with`".into()))?, &spec.backbone)?,
                    },
                    "concat" => LayerKind::Concat {
                        with: get("with")
                            .ok_or_else(|| bad(e.line, "concat needs `with`".into()))?
                            .split(',')
                            .map(|r| layer_ref(r, &spec.backbone))
                            .collect::<Result<_>>()?,
                    },
                    other => return Err(bad(e.line, format!("unknown layer type `{other}`"))),
                };
                if idx == 0 && source == LayerSource::Previous {
                    spec.backbone.push(LayerSpec::other(name, kind, LayerSource::Input));
                } else {
                    spec.backbone.push(LayerSpec::other(name, kind, source));
                }
            }
            "stage" => spec.stages.push(Stage {
                output: layer_ref(&head, &spec.backbone)?,
                blocks: num("blocks", Some(1))?,
            }),
            "decoder" => {
                spec.decoder = match head.as_str() {
                    "none" => Decoder::None,
                    "dilated" => Decoder::Dilated {
                        output_scale: num("scale", None)?,
                    },
                    "symmetric" => Decoder::SymmetricDecoder,
                    "fpn" => {
                        let channel_dim = num("channel_dim", Some(256))?;
                        let semantic_head = match get("head_classes") {
                            None => None,
                            Some(_) => {
                                let mut cfg = BranchConfig::new(num("head_classes", None)?, get("head_other") == Some("true"));
                                cfg.branch_width = num("head_width", Some(cfg.branch_width))?;
                                cfg.channel_dim = channel_dim;
                                Some(cfg)
                            }
                        };
                        Decoder::Fpn {
                            channel_dim,
                            semantic_head,
                        }
                    }
                    other => return Err(bad(e.line, format!("unknown decoder `{other}`"))),
                }
            }
            other => return Err(bad(e.line, format!("unknown key `{other}`"))),
        }
    }
    if spec.backbone.is_empty() {
        return Err(Error::malformed("architecture spec", "no layers"));
    }
    resolve_channels(&spec.backbone, spec.input_channels)?;
    Ok(spec)
}
