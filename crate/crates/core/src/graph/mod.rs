//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a [`Node`] whose parents
//! already exist, so node ids are a topological order by construction.
//! [`Graph::backward`] sweeps the tape once in reverse and returns the
//! gradient of a scalar loss with respect to every parameter leaf.
//!
//! Gradients stop at `stop_gradient`, `argmax_one_hot`, and stochastic
//! nodes that are not reparameterized. Straight-through nodes carry a
//! discrete forward value but route their adjoint to a continuous parent.

mod kernels;
mod optim;
mod tensor;

use std::collections::BTreeMap;

pub use optim::{sgd_momentum_step, MomentumState};
pub use kernels::{sigmoid, softplus};
pub use tensor::{argmax, Tensor};

use crate::error::{Error, Result};
use kernels::*;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Distribution attached to a stochastic node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistTag {
    Categorical,
    Bernoulli,
    GumbelSoftmax,
    StGumbelSoftmax,
    Gaussian,
}

/// Operation identity of a node. Parameterized variants carry their
/// static arguments (axis, temperature, bounds).
#[derive(Debug, Clone, PartialEq)]
pub enum OpTag {
    Constant,
    Param,
    /// Elementwise, identical shapes.
    Add,
    Sub,
    Mul,
    /// `[n, d] + [d]`, the row vector broadcast over rows.
    AddRow,
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    Scale(f64),
    AddScalar(f64),
    /// Elementwise product with a single-element tensor (second parent).
    ScaleBy,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    /// Natural log; non-positive inputs are an error.
    Log,
    Softplus,
    Clamp { lo: f64, hi: f64 },
    LogSumExp { axis: usize },
    Softmax { axis: usize },
    TemperedSoftmax { axis: usize, tau: f64 },
    LogSoftmax { axis: usize },
    Sum { axis: usize },
    Mean { axis: usize },
    SumAll,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Reshape { shape: Vec<usize> },
    ArgmaxOneHot { axis: usize },
    StopGradient,
    /// Forward value is one-hot, backward is the identity onto the parent.
    StraightThrough { axis: usize },
    /// Sample produced by a deterministic transform (the parent) of noise.
    Stochastic { dist: DistTag, reparameterized: bool },
}

/// One entry of the tape.
#[derive(Debug, Clone)]
pub struct Node {
    pub tag: OpTag,
    pub parents: Vec<Var>,
    pub value: Tensor,
    pub requires_grad: bool,
    /// Noise realization for stochastic nodes.
    pub noise: Option<Tensor>,
}

/// Gradients of a loss keyed by parameter node.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    /// Gradient for `v`, zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.grads
            .get(&v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    adjoints: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Adjoint of `v` after [`Graph::backward`]; `None` if nothing flowed.
    pub fn adjoint(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    fn push(&mut self, tag: OpTag, parents: Vec<Var>, value: Tensor) -> Var {
        let requires_grad = match &tag {
            OpTag::Param => true,
            OpTag::Constant | OpTag::StopGradient | OpTag::ArgmaxOneHot { .. } => false,
            OpTag::Stochastic {
                reparameterized: false,
                ..
            } => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            tag,
            parents,
            value,
            requires_grad,
            noise: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; [`Graph::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(OpTag::Param, Vec::new(), value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(OpTag::Constant, Vec::new(), value)
    }

    /// Applies `tag` to `inputs`. Leaves and stochastic nodes have their own
    /// constructors and are rejected here.
    pub fn apply(&mut self, tag: OpTag, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{tag:?} takes {n} inputs, got {}",
                    inputs.len()
                )));
            }
            Ok(())
        };
        let value = match &tag {
            OpTag::Constant | OpTag::Param | OpTag::Stochastic { .. } => {
                return Err(Error::InvalidArgument(format!(
                    "{tag:?} nodes are created with dedicated constructors"
                )))
            }
            OpTag::Add | OpTag::Sub | OpTag::Mul => {
                arity(2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                let name = match tag {
                    OpTag::Add => "add",
                    OpTag::Sub => "sub",
                    _ => "mul",
                };
                if a.shape() != b.shape() {
                    return Err(Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                match tag {
                    OpTag::Add => a.zip_map(b, |x, y| x + y)?,
                    OpTag::Sub => a.zip_map(b, |x, y| x - y)?,
                    _ => a.zip_map(b, |x, y| x * y)?,
                }
            }
            OpTag::AddRow => {
                arity(2)?;
                add_row(self.value(inputs[0]), self.value(inputs[1]))?
            }
            OpTag::MatMul => {
                arity(2)?;
                matmul(self.value(inputs[0]), self.value(inputs[1]))?
            }
            OpTag::Scale(c) => {
                arity(1)?;
                let c = *c;
                self.value(inputs[0]).map(|x| c * x)
            }
            OpTag::AddScalar(c) => {
                arity(1)?;
                let c = *c;
                self.value(inputs[0]).map(|x| x + c)
            }
            OpTag::ScaleBy => {
                arity(2)?;
                let s = self.value(inputs[1]);
                if !s.is_scalar_shaped() {
                    return Err(Error::shape("scale_by", format!("factor shape {:?}", s.shape())));
                }
                let s = s.data()[0];
                self.value(inputs[0]).map(|x| x * s)
            }
            OpTag::Sigmoid => {
                arity(1)?;
                self.value(inputs[0]).map(sigmoid)
            }
            OpTag::Tanh => {
                arity(1)?;
                self.value(inputs[0]).map(f64::tanh)
            }
            OpTag::Relu => {
                arity(1)?;
                self.value(inputs[0]).map(|x| x.max(0.0))
            }
            OpTag::Exp => {
                arity(1)?;
                self.value(inputs[0]).map(f64::exp)
            }
            OpTag::Log => {
                arity(1)?;
                let x = self.value(inputs[0]);
                if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(Error::domain("log", format!("input {bad} is not positive")));
                }
                x.map(f64::ln)
            }
            OpTag::Softplus => {
                arity(1)?;
                self.value(inputs[0]).map(softplus)
            }
            OpTag::Clamp { lo, hi } => {
                arity(1)?;
                if lo > hi {
                    return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
                }
                let (lo, hi) = (*lo, *hi);
                self.value(inputs[0]).map(|x| x.clamp(lo, hi))
            }
            OpTag::LogSumExp { axis } => {
                arity(1)?;
                log_sum_exp(self.value(inputs[0]), *axis)?
            }
            OpTag::Softmax { axis } => {
                arity(1)?;
                softmax(self.value(inputs[0]), *axis, 1.0)?
            }
            OpTag::TemperedSoftmax { axis, tau } => {
                arity(1)?;
                if !(*tau > 0.0) {
                    return Err(Error::InvalidArgument(format!("temperature {tau} must be > 0")));
                }
                softmax(self.value(inputs[0]), *axis, *tau)?
            }
            OpTag::LogSoftmax { axis } => {
                arity(1)?;
                log_softmax(self.value(inputs[0]), *axis)?
            }
            OpTag::Sum { axis } => {
                arity(1)?;
                reduce_sum(self.value(inputs[0]), *axis, 1.0)?
            }
            OpTag::Mean { axis } => {
                arity(1)?;
                let x = self.value(inputs[0]);
                check_axis("mean", x, *axis)?;
                let n = x.shape()[*axis];
                if n == 0 {
                    return Err(Error::shape("mean", "empty axis"));
                }
                reduce_sum(x, *axis, 1.0 / n as f64)?
            }
            OpTag::SumAll => {
                arity(1)?;
                Tensor::scalar(self.value(inputs[0]).sum())
            }
            OpTag::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(Error::InvalidArgument("concat of nothing".into()));
                }
                let parts: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                concat(&parts, *axis)?
            }
            OpTag::Slice { axis, start, end } => {
                arity(1)?;
                slice(self.value(inputs[0]), *axis, *start, *end)?
            }
            OpTag::Reshape { shape } => {
                arity(1)?;
                self.value(inputs[0]).reshape(shape)?
            }
            OpTag::ArgmaxOneHot { axis } | OpTag::StraightThrough { axis } => {
                arity(1)?;
                argmax_one_hot(self.value(inputs[0]), *axis)?
            }
            OpTag::StopGradient => {
                arity(1)?;
                self.value(inputs[0]).clone()
            }
        };
        Ok(self.push(tag, inputs.to_vec(), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpTag::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpTag::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpTag::Mul, &[a, b])
    }
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.apply(OpTag::AddRow, &[a, row])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpTag::MatMul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpTag::Scale(c), &[a])
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpTag::AddScalar(c), &[a])
    }
    pub fn scale_by(&mut self, a: Var, factor: Var) -> Result<Var> {
        self.apply(OpTag::ScaleBy, &[a, factor])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpTag::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpTag::Tanh, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpTag::Relu, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(OpTag::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpTag::Log, &[a])
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(OpTag::Softplus, &[a])
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(OpTag::Clamp { lo, hi }, &[a])
    }
    pub fn log_sum_exp(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpTag::LogSumExp { axis }, &[a])
    }
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpTag::Softmax { axis }, &[a])
    }
    pub fn tempered_softmax(&mut self, a: Var, axis: usize, tau: f64) -> Result<Var> {
        self.apply(OpTag::TemperedSoftmax { axis, tau }, &[a])
    }
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpTag::LogSoftmax { axis }, &[a])
    }
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpTag::Sum { axis }, &[a])
    }
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpTag::Mean { axis }, &[a])
    }
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.apply(OpTag::SumAll, &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(OpTag::Concat { axis }, parts)
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.apply(OpTag::Slice { axis, start, end }, &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(
            OpTag::Reshape {
                shape: shape.to_vec(),
            },
            &[a],
        )
    }
    pub fn argmax_one_hot(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpTag::ArgmaxOneHot { axis }, &[a])
    }
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        self.apply(OpTag::StopGradient, &[a])
    }

    /// Straight-through node whose forward value is `hard` and whose
    /// adjoint is passed unchanged to `soft`.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var> {
        if hard.shape() != self.shape(soft) {
            return Err(Error::shape(
                "straight_through",
                format!("{:?} vs {:?}", hard.shape(), self.shape(soft)),
            ));
        }
        let axis = self.shape(soft).len().saturating_sub(1);
        Ok(self.push(OpTag::StraightThrough { axis }, vec![soft], hard))
    }

    /// Stochastic node whose value is the output of `transform`, a
    /// deterministic function of parameters and `noise`. Gradients pass to
    /// `transform` only when `reparameterized` is set.
    pub fn stochastic(
        &mut self,
        transform: Var,
        dist: DistTag,
        noise: Tensor,
        reparameterized: bool,
    ) -> Var {
        let value = self.value(transform).clone();
        let v = self.push(
            OpTag::Stochastic {
                dist,
                reparameterized,
            },
            vec![transform],
            value,
        );
        self.nodes[v.0].noise = Some(noise);
        v
    }

    /// Reverse sweep from a scalar `loss`. Adjoints are fresh for this call;
    /// a second call on the same graph is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let loss_shape = self.value(loss).shape().to_vec();
        if !self.value(loss).is_scalar_shaped() {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        self.backward_done = true;

        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::full(&loss_shape, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.parents.iter().any(|p| p.0 >= i) {
                return Err(Error::Cycle(i));
            }
            let Some(g) = adj[i].take() else { continue };
            let contributions = self.local_gradients(i, &g)?;
            for (parent, delta) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            }
            adj[i] = Some(g);
        }

        let mut grads = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.tag == OpTag::Param {
                if let Some(g) = &adj[i] {
                    grads.insert(Var(i), g.clone());
                }
            }
        }
        self.adjoints = adj;
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of node `i` for upstream adjoint `g`.
    fn local_gradients(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let p = &node.parents;
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        let out = match &node.tag {
            OpTag::Constant
            | OpTag::Param
            | OpTag::StopGradient
            | OpTag::ArgmaxOneHot { .. } => Vec::new(),
            OpTag::Add => vec![(p[0], g.clone()), (p[1], g.clone())],
            OpTag::Sub => vec![(p[0], g.clone()), (p[1], g.map(|x| -x))],
            OpTag::Mul => vec![
                (p[0], g.zip_map(val(p[1]), |a, b| a * b)?),
                (p[1], g.zip_map(val(p[0]), |a, b| a * b)?),
            ],
            OpTag::AddRow => vec![(p[0], g.clone()), (p[1], reduce_sum(g, 0, 1.0)?)],
            OpTag::MatMul => {
                let (a, b) = (val(p[0]), val(p[1]));
                vec![(p[0], matmul_nt(g, b)?), (p[1], matmul_tn(a, g)?)]
            }
            OpTag::Scale(c) => {
                let c = *c;
                vec![(p[0], g.map(|x| c * x))]
            }
            OpTag::AddScalar(_) => vec![(p[0], g.clone())],
            OpTag::ScaleBy => {
                let s = val(p[1]).data()[0];
                let ds: f64 = g.data().iter().zip(val(p[0]).data()).map(|(a, b)| a * b).sum();
                vec![
                    (p[0], g.map(|x| x * s)),
                    (p[1], Tensor::full(val(p[1]).shape(), ds)),
                ]
            }
            OpTag::Sigmoid => vec![(p[0], g.zip_map(y, |g, s| g * s * (1.0 - s))?)],
            OpTag::Tanh => vec![(p[0], g.zip_map(y, |g, t| g * (1.0 - t * t))?)],
            OpTag::Relu => vec![(p[0], g.zip_map(val(p[0]), |g, x| if x > 0.0 { g } else { 0.0 })?)],
            OpTag::Exp => vec![(p[0], g.zip_map(y, |g, e| g * e)?)],
            OpTag::Log => vec![(p[0], g.zip_map(val(p[0]), |g, x| g / x)?)],
            OpTag::Softplus => vec![(p[0], g.zip_map(val(p[0]), |g, x| g * sigmoid(x))?)],
            OpTag::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                vec![(
                    p[0],
                    g.zip_map(val(p[0]), |g, x| if x > lo && x < hi { g } else { 0.0 })?,
                )]
            }
            OpTag::LogSumExp { axis } => vec![(p[0], log_sum_exp_backward(val(p[0]), y, g, *axis))],
            OpTag::Softmax { axis } => vec![(p[0], softmax_backward(y, g, *axis, 1.0))],
            OpTag::TemperedSoftmax { axis, tau } => {
                vec![(p[0], softmax_backward(y, g, *axis, *tau))]
            }
            OpTag::LogSoftmax { axis } => vec![(p[0], log_softmax_backward(y, g, *axis))],
            OpTag::Sum { axis } => vec![(p[0], broadcast_axis(g, val(p[0]).shape(), *axis, 1.0))],
            OpTag::Mean { axis } => {
                let shape = val(p[0]).shape();
                let n = shape[*axis] as f64;
                vec![(p[0], broadcast_axis(g, shape, *axis, 1.0 / n))]
            }
            OpTag::SumAll => {
                let s = g.data()[0];
                vec![(p[0], Tensor::full(val(p[0]).shape(), s))]
            }
            OpTag::Concat { axis } => {
                let mut start = 0;
                let mut parts = Vec::with_capacity(p.len());
                for &parent in p {
                    let len = val(parent).shape()[*axis];
                    parts.push((parent, slice(g, *axis, start, start + len)?));
                    start += len;
                }
                parts
            }
            OpTag::Slice { axis, start, .. } => {
                vec![(p[0], slice_backward(g, val(p[0]).shape(), *axis, *start))]
            }
            OpTag::Reshape { .. } => vec![(p[0], g.reshape(val(p[0]).shape())?)],
            OpTag::StraightThrough { .. } => vec![(p[0], g.clone())],
            OpTag::Stochastic {
                reparameterized, ..
            } => {
                if *reparameterized {
                    vec![(p[0], g.clone())]
                } else {
                    Vec::new()
                }
            }
        };
        Ok(out)
    }
}
