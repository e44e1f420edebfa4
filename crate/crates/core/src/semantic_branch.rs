//! FPN top-down pathway and the semantic segmentation branch.
//!
//! Every pyramid level is brought to 1/4 scale by a sequence of
//! conv3x3 -> group norm -> ReLU -> 2x bilinear stages (one stage per
//! octave; the 1/4 level gets a single conv block without upsampling). The
//! four 1/4-scale maps are aggregated, classified by a 1x1 conv, upsampled 4x
//! and normalised with a channel softmax.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kvconfig;
use crate::ops::{ConvGeometry, DEFAULT_GN_GROUPS};
use crate::params::{ConvRef, NormRef, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// Pyramid strides relative to the input image, finest first.
pub const LEVEL_STRIDES: [usize; 4] = [4, 8, 16, 32];
pub const DEFAULT_CHANNEL_DIM: usize = 256;
pub const DEFAULT_BRANCH_WIDTH: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevels {
    levels: Vec<Tensor>,
    channel_dim: usize,
}

impl PyramidLevels {
    /// `levels` are ordered finest (1/4) to coarsest (1/32).
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.len() != LEVEL_STRIDES.len() {
            return Err(Error::invalid(format!(
                "pyramid needs {} levels, got {}",
                LEVEL_STRIDES.len(),
                levels.len()
            )));
        }
        let base = levels[0].shape();
        for (k, t) in levels.iter().enumerate() {
            let s = t.shape();
            let expect = Shape::new(base.n, base.c, base.h >> k, base.w >> k);
            if s != expect || (base.h >> k) << k != base.h || (base.w >> k) << k != base.w {
                return Err(Error::shape(
                    "pyramid level",
                    format!("{expect} at stride {}", LEVEL_STRIDES[k]),
                    s,
                ));
            }
        }
        let channel_dim = base.c;
        Ok(PyramidLevels { levels, channel_dim })
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn channel_dim(&self) -> usize {
        self.channel_dim
    }

    pub fn batch(&self) -> usize {
        self.levels[0].shape().n
    }

    /// `(height, width)` of the image the pyramid was computed from.
    pub fn image_extent(&self) -> (usize, usize) {
        let s = self.levels[0].shape();
        (s.h * LEVEL_STRIDES[0], s.w * LEVEL_STRIDES[0])
    }
}

/// Lateral 1x1 convs plus the per-level 3x3 output convs of an FPN.
#[derive(Debug, Clone)]
pub struct Fpn {
    store: ParamStore,
    laterals: Vec<ConvRef>,
    outputs: Vec<ConvRef>,
    in_channels: Vec<usize>,
    channel_dim: usize,
}

impl Fpn {
    /// `in_channels` are the bottom-up channel counts, finest first.
    pub fn new(in_channels: [usize; 4], channel_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let laterals = in_channels
            .iter()
            .zip(LEVEL_STRIDES)
            .map(|(&c, s)| store.add_conv(&format!("fpn.lateral{s}"), c, channel_dim, 1, ConvGeometry::same(1), rng))
            .collect();
        let outputs = LEVEL_STRIDES
            .iter()
            .map(|s| {
                store.add_conv(
                    &format!("fpn.output{s}"),
                    channel_dim,
                    channel_dim,
                    3,
                    ConvGeometry::same(3),
                    rng,
                )
            })
            .collect();
        Fpn {
            store,
            laterals,
            outputs,
            in_channels: in_channels.to_vec(),
            channel_dim,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn channel_dim(&self) -> usize {
        self.channel_dim
    }

    /// Records the top-down pathway. `bottom_up` is finest first; returns
    /// the merged-and-smoothed levels, finest first.
    pub fn record(&self, g: &mut Graph, params: &[Var], bottom_up: &[Var]) -> Result<Vec<Var>> {
        for (k, &v) in bottom_up.iter().enumerate() {
            let s = g.shape(v);
            if s.c != self.in_channels[k] {
                return Err(Error::shape(
                    "fpn lateral",
                    format!("{} channels at stride {}", self.in_channels[k], LEVEL_STRIDES[k]),
                    s,
                ));
            }
        }
        let lat: Vec<Var> = self
            .laterals
            .iter()
            .zip(bottom_up)
            .map(|(c, &x)| conv(g, params, c, x))
            .collect::<Result<_>>()?;
        let mut merged = vec![lat[3]];
        for k in (0..3).rev() {
            let up = g.upsample(*merged.last().unwrap(), 2)?;
            merged.push(g.sum(&[up, lat[k]])?);
        }
        merged.reverse();
        merged
            .iter()
            .zip(&self.outputs)
            .map(|(&m, c)| conv(g, params, c, m))
            .collect()
    }

    pub fn forward(&self, bottom_up: &BTreeMap<usize, Tensor>) -> Result<PyramidLevels> {
        let ordered = check_bottom_up(bottom_up)?;
        let mut g = Graph::new();
        let params = self.store.record(&mut g);
        let inputs: Vec<Var> = ordered.into_iter().map(|t| g.leaf(t.clone())).collect();
        let out = self.record(&mut g, &params, &inputs)?;
        PyramidLevels::new(out.iter().map(|&v| g.value(v).clone()).collect())
    }
}

/// Validates that `bottom_up` holds exactly strides 4..32 with halving extents.
fn check_bottom_up(bottom_up: &BTreeMap<usize, Tensor>) -> Result<Vec<&Tensor>> {
    let mut out = Vec::with_capacity(4);
    for s in LEVEL_STRIDES {
        let t = bottom_up
            .get(&s)
            .ok_or_else(|| Error::invalid(format!("bottom-up features missing stride {s} (scale 1/{s})")))?;
        out.push(t);
    }
    if let Some(extra) = bottom_up.keys().find(|k| !LEVEL_STRIDES.contains(k)) {
        return Err(Error::invalid(format!("unexpected bottom-up stride {extra}")));
    }
    for k in 1..4 {
        let (fine, coarse) = (out[k - 1].shape(), out[k].shape());
        if fine.h != 2 * coarse.h || fine.w != 2 * coarse.w || fine.n != coarse.n {
            return Err(Error::shape(
                "fpn bottom-up",
                format!("half of {fine} at stride {}", LEVEL_STRIDES[k]),
                coarse,
            ));
        }
    }
    Ok(out)
}

/// Runs a freshly initialised FPN over `bottom_up` (keys are strides 4, 8,
/// 16, 32).
pub fn fpn_topdown(bottom_up: &BTreeMap<usize, Tensor>, channel_dim: usize, rng: &mut Rng) -> Result<PyramidLevels> {
    let ordered = check_bottom_up(bottom_up)?;
    let chans = [0, 1, 2, 3].map(|k| ordered[k].shape().c);
    Fpn::new(chans, channel_dim, rng).forward(bottom_up)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Sum,
    Concat,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Concat => "concat",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "concat" => Ok(Aggregation::Concat),
            _ => Err(Error::invalid(format!("unknown aggregation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchConfig {
    pub branch_width: usize,
    pub aggregation: Aggregation,
    pub num_classes: usize,
    pub include_other_class: bool,
    /// Channel dimension of the incoming pyramid.
    pub channel_dim: usize,
    /// Group-norm groups; `None` picks `gcd(32, branch_width)`.
    pub groups: Option<usize>,
}

impl BranchConfig {
    pub fn new(num_classes: usize, include_other_class: bool) -> Self {
        BranchConfig {
            branch_width: DEFAULT_BRANCH_WIDTH,
            aggregation: Aggregation::Sum,
            num_classes,
            include_other_class,
            channel_dim: DEFAULT_CHANNEL_DIM,
            groups: None,
        }
    }

    /// 53 stuff classes plus one `other` class.
    pub fn coco() -> Self {
        Self::new(53, true)
    }

    pub fn output_channels(&self) -> usize {
        self.num_classes + usize::from(self.include_other_class)
    }

    /// Index of the `other` channel, when present.
    pub fn other_channel(&self) -> Option<usize> {
        self.include_other_class.then_some(self.num_classes)
    }

    pub fn norm_groups(&self) -> usize {
        self.groups.unwrap_or_else(|| gcd(DEFAULT_GN_GROUPS, self.branch_width))
    }

    pub fn validate(&self) -> Result<()> {
        if self.branch_width == 0 || self.num_classes == 0 || self.channel_dim == 0 {
            return Err(Error::invalid("branch width, class count and channel dim must be >= 1"));
        }
        let g = self.norm_groups();
        if g == 0 || self.branch_width % g != 0 {
            return Err(Error::invalid(format!(
                "branch width {} not divisible into {g} groups",
                self.branch_width
            )));
        }
        Ok(())
    }

    /// Parse a `key = value` branch file; returns the config and its seed.
    pub fn parse(text: &str) -> Result<(BranchConfig, u64)> {
        let mut cfg = BranchConfig::new(1, false);
        let mut seed = 0;
        let mut saw_classes = false;
        for e in kvconfig::parse(text)? {
            match e.key.as_str() {
                "width" => cfg.branch_width = e.parse_value()?,
                "aggregation" => cfg.aggregation = e.value.parse()?,
                "classes" => {
                    cfg.num_classes = e.parse_value()?;
                    saw_classes = true;
                }
                "other_class" => cfg.include_other_class = e.parse_bool()?,
                "channel_dim" => cfg.channel_dim = e.parse_value()?,
                "groups" => cfg.groups = Some(e.parse_value()?),
                "seed" => seed = e.parse_value()?,
                _ => {
                    return Err(Error::malformed(
                        "branch config",
                        format!("line {}: unknown key `{}`", e.line, e.key),
                    ))
                }
            }
        }
        if !saw_classes {
            return Err(Error::malformed("branch config", "missing `classes`"));
        }
        cfg.validate()?;
        Ok((cfg, seed))
    }

    pub fn to_config_string(&self, seed: u64) -> String {
        let mut s = format!(
            "width = {}\naggregation = {}\nclasses = {}\nother_class = {}\nchannel_dim = {}\n",
            self.branch_width, self.aggregation, self.num_classes, self.include_other_class, self.channel_dim
        );
        if let Some(g) = self.groups {
            s.push_str(&format!("groups = {g}\n"));
        }
        s.push_str(&format!("seed = {seed}\n"));
        s
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv: ConvRef,
    norm: NormRef,
    upsample: bool,
}

/// Graph handles produced by [`SemanticBranch::record`].
#[derive(Debug, Clone)]
pub struct BranchTrace {
    /// Parameter leaves in store order.
    pub params: Vec<Var>,
    /// Per-level maps entering aggregation, finest level first.
    pub aggregation_inputs: Vec<Var>,
    /// Full-resolution class scores before softmax.
    pub logits: Var,
    pub probs: Var,
}

#[derive(Debug, Clone)]
pub struct SemanticBranch {
    config: BranchConfig,
    store: ParamStore,
    levels: Vec<Vec<Stage>>,
    fuse: Option<ConvRef>,
    classifier: ConvRef,
}

impl SemanticBranch {
    /// Builds and initialises the branch. Parameters are drawn level by level
    /// (1/4 first), then the concat fuse conv if any, then the classifier.
    pub fn new(config: BranchConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let width = config.branch_width;
        let groups = config.norm_groups();
        let mut store = ParamStore::new();
        let mut levels = Vec::with_capacity(4);
        for (k, stride) in LEVEL_STRIDES.iter().enumerate() {
            let n_stages = k.max(1);
            let mut stages = Vec::with_capacity(n_stages);
            for j in 0..n_stages {
                let name = format!("level{stride}.stage{j}");
                let c_in = if j == 0 { config.channel_dim } else { width };
                let conv = store.add_conv(&format!("{name}.conv"), c_in, width, 3, ConvGeometry::same(3), rng);
                let norm = store.add_norm(&format!("{name}.norm"), width, groups)?;
                stages.push(Stage {
                    conv,
                    norm,
                    upsample: k > 0,
                });
            }
            levels.push(stages);
        }
        let fuse = (config.aggregation == Aggregation::Concat)
            .then(|| store.add_conv("fuse", 4 * width, width, 1, ConvGeometry::same(1), rng));
        let classifier = store.add_conv(
            "classifier",
            width,
            config.output_channels(),
            1,
            ConvGeometry::same(1),
            rng,
        );
        Ok(SemanticBranch {
            config,
            store,
            levels,
            fuse,
            classifier,
        })
    }

    pub fn config(&self) -> &BranchConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Number of 2x upsampling stages per level, finest level first.
    pub fn upsample_stage_counts(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for (k, stages) in self.levels.iter().enumerate() {
            out[k] = stages.iter().filter(|s| s.upsample).count();
        }
        out
    }

    /// Store indices of the classifier weight and bias.
    pub fn classifier_params(&self) -> [usize; 2] {
        [self.classifier.weight, self.classifier.bias]
    }

    /// Records the branch on top of pyramid leaves (finest first).
    pub fn record(&self, g: &mut Graph, pyramid: &[Var]) -> Result<BranchTrace> {
        let params = self.store.record(g);
        self.record_with(g, &params, pyramid)
    }

    pub fn record_with(&self, g: &mut Graph, params: &[Var], pyramid: &[Var]) -> Result<BranchTrace> {
        if pyramid.len() != 4 {
            return Err(Error::invalid("semantic branch expects 4 pyramid levels"));
        }
        let mut agg = Vec::with_capacity(4);
        for (stages, &input) in self.levels.iter().zip(pyramid) {
            let c = g.shape(input).c;
            if c != self.config.channel_dim {
                return Err(Error::shape(
                    "semantic branch input",
                    format!("{} channels", self.config.channel_dim),
                    g.shape(input),
                ));
            }
            let mut x = input;
            for st in stages {
                x = conv(g, params, &st.conv, x)?;
                x = g.group_norm(x, params[st.norm.gamma], params[st.norm.beta], st.norm.groups, st.norm.eps)?;
                x = g.relu(x);
                if st.upsample {
                    x = g.upsample(x, 2)?;
                }
            }
            agg.push(x);
        }
        let merged = match self.config.aggregation {
            Aggregation::Sum => g.sum(&agg)?,
            Aggregation::Concat => {
                let cat = g.concat(&agg)?;
                conv(g, params, self.fuse.as_ref().expect("concat branch has fuse conv"), cat)?
            }
        };
        let scores = conv(g, params, &self.classifier, merged)?;
        let logits = g.upsample(scores, 4)?;
        let probs = g.softmax(logits);
        Ok(BranchTrace {
            params: params.to_vec(),
            aggregation_inputs: agg,
            logits,
            probs,
        })
    }

    /// Per-pixel class distribution `(n, C_out, H, W)`.
    pub fn forward(&self, pyramid: &PyramidLevels) -> Result<Tensor> {
        let mut g = Graph::new();
        let inputs: Vec<Var> = pyramid.levels().iter().map(|t| g.leaf(t.clone())).collect();
        let trace = self.record(&mut g, &inputs)?;
        Ok(g.value(trace.probs).clone())
    }
}

/// Builds a branch from `config` with parameters drawn from `rng`.
pub fn build_branch(config: BranchConfig, rng: &mut Rng) -> Result<SemanticBranch> {
    SemanticBranch::new(config, rng)
}

fn conv(g: &mut Graph, params: &[Var], c: &ConvRef, x: Var) -> Result<Var> {
    g.conv2d(x, params[c.weight], params[c.bias], c.geometry)
}
