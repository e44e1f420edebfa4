//! Recorded forward pass with exact reverse-mode gradients.
//!
//! A [`Graph`] is built fresh for each forward pass: leaves hold inputs and
//! parameters, every other node is one of the seven kernel families in
//! [`ops`](crate::ops). [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients additively across fan-out.

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    GroupNorm,
    Relu,
    Upsample,
    Sum,
    Concat,
    Softmax,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        stats: Vec<(f64, f64)>,
    },
    Relu(Var),
    Upsample {
        input: Var,
        factor: usize,
    },
    Sum(Vec<Var>),
    Concat(Vec<Var>),
    Softmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.node(v)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.node(v).shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        match self.nodes[v.0].op {
            Op::Leaf => OpKind::Leaf,
            Op::Conv { .. } => OpKind::Conv2d,
            Op::GroupNorm { .. } => OpKind::GroupNorm,
            Op::Relu(_) => OpKind::Relu,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Sum(_) => OpKind::Sum,
            Op::Concat(_) => OpKind::Concat,
            Op::Softmax(_) => OpKind::Softmax,
        }
    }

    /// Direct inputs of a node, in argument order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::Conv {
                input, weight, bias, ..
            } => vec![*input, *weight, *bias],
            Op::GroupNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Relu(x) | Op::Softmax(x) | Op::Upsample { input: x, .. } => vec![*x],
            Op::Sum(xs) | Op::Concat(xs) => xs.clone(),
        }
    }

    /// Sign pattern (`input > 0`) of every ReLU input in recording order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.node(x).data().iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geometry: ConvGeometry) -> Result<Var> {
        let ws = self.shape(weight);
        if ws.h != ws.w || !(ws.h == 1 || ws.h == 3) {
            return Err(Error::invalid(format!("conv kernel must be 1x1 or 3x3, got {ws}")));
        }
        let y = ops::conv2d_raw(self.node(input), self.node(weight), self.node(bias), geometry)?;
        Ok(self.push(
            y,
            Op::Conv {
                input,
                weight,
                bias,
                geometry,
            },
        ))
    }

    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize, eps: f32) -> Result<Var> {
        let (y, stats) =
            ops::group_norm_raw(self.node(input), self.node(gamma), self.node(beta), groups, eps)?;
        Ok(self.push(
            y,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                stats,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let y = ops::relu(self.node(input));
        self.push(y, Op::Relu(input))
    }

    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let y = ops::bilinear_upsample(self.node(input), factor)?;
        Ok(self.push(y, Op::Upsample { input, factor }))
    }

    pub fn sum(&mut self, inputs: &[Var]) -> Result<Var> {
        let ts: Vec<&Tensor> = inputs.iter().map(|&v| self.node(v)).collect();
        let y = ops::elementwise_sum(&ts)?;
        Ok(self.push(y, Op::Sum(inputs.to_vec())))
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let ts: Vec<&Tensor> = inputs.iter().map(|&v| self.node(v)).collect();
        let y = ops::channel_concat(&ts)?;
        Ok(self.push(y, Op::Concat(inputs.to_vec())))
    }

    pub fn softmax(&mut self, input: Var) -> Var {
        let y = ops::softmax_channels(self.node(input));
        self.push(y, Op::Softmax(input))
    }

    /// Reverse-mode pass from `output`, seeded with `dL/d(output)`.
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        if seed.shape() != self.shape(output) {
            return Err(Error::shape("backward seed", self.shape(output), seed.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv {
                    input,
                    weight,
                    bias,
                    geometry,
                } => {
                    let (gx, gw, gb) =
                        ops::conv2d_backward(self.node(*input), self.node(*weight), *geometry, &g);
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *weight, gw);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::GroupNorm {
                    input,
                    gamma,
                    beta,
                    groups,
                    stats,
                } => {
                    let (gx, gg, gbeta) =
                        ops::group_norm_backward(self.node(*input), self.node(*gamma), *groups, stats, &g);
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::Relu(x) => {
                    let gx = ops::relu_backward(self.node(*x), &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Upsample { input, factor } => {
                    let gx = ops::bilinear_upsample_backward(self.shape(*input), *factor, &g);
                    accumulate(&mut grads, *input, gx);
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        accumulate(&mut grads, x, g.clone());
                    }
                }
                Op::Concat(xs) => {
                    let mut start = 0;
                    for &x in xs {
                        let c = self.shape(x).c;
                        let part = g.channel_slice(start, c)?;
                        accumulate(&mut grads, x, part);
                        start += c;
                    }
                }
                Op::Softmax(x) => {
                    let gx = ops::softmax_backward(&node.value, &g);
                    accumulate(&mut grads, *x, gx);
                }
            }
            // Leaves keep their gradient; interior gradients are dropped
            // once propagated.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g).expect("gradient shape matches node"),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of leaves reached by a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the leaf does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when it does not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
