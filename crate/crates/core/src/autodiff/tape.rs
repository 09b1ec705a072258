//! Dynamic tape for reverse-mode differentiation.
//!
//! Every operation appends one node holding its forward value. Nodes only
//! reference operands with smaller indices, so a single reverse sweep over
//! the node list visits each node exactly once in a valid order.

use super::conv::{self, ConvRecord};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability clamp applied inside [`Tape::binary_cross_entropy`].
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn placeholder() -> Var {
        Var(usize::MAX)
    }
}

/// Pointwise operations selectable through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Hadamard,
    Sigmoid,
    Tanh,
    Scale(f64),
}

enum Op {
    Leaf,
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    OneMinus(Var),
    ScaleBy {
        scalar: Var,
        v: Var,
    },
    SumAll(Var),
    SumN(Vec<Var>),
    Reshape(Var),
    Conv(Box<ConvRecord>),
    Bce {
        p: Var,
        label: f64,
    },
    /// Cross-entropy of a sigmoid output, differentiated at the logit.
    BceLogit {
        logit: Var,
        p: Var,
        label: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the backward root w.r.t. `var`, if any flowed into it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient w.r.t. `var`, or zeros of length `len` when none flowed.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        let rg = self.any_grad(&[a, b]);
        self.push(value, op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    /// `W x` for `W: [p, q]`, `x: [q]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (ws, xs) = (self.value(w).shape(), self.value(x).shape());
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::Dimension {
                op: "matvec",
                lhs: ws.to_vec(),
                rhs: xs.to_vec(),
            });
        }
        let (p, q) = (ws[0], ws[1]);
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        let out: Vec<f64> = wd
            .chunks_exact(q)
            .map(|row| row.iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        debug_assert_eq!(out.len(), p);
        let rg = self.any_grad(&[w, x]);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        Ok(self.zip_with(a, b, Op::Hadamard(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    /// `1 - a`, pointwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, Op::OneMinus(a), |x| 1.0 - x)
    }

    /// Dispatches one of the pointwise operations by tag.
    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Hadamard => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Dimension {
                op: "elementwise arity",
                lhs: vec![arity],
                rhs: vec![args.len()],
            });
        }
        Ok(match op {
            Elementwise::Add => self.add(args[0], args[1])?,
            Elementwise::Hadamard => self.hadamard(args[0], args[1])?,
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Scale(f) => self.scale(args[0], f),
        })
    }

    /// Multiplies `v` by the single-element tensor `scalar`.
    pub fn scale_by(&mut self, scalar: Var, v: Var) -> Result<Var> {
        if self.value(scalar).len() != 1 {
            return Err(Error::Dimension {
                op: "scale_by",
                lhs: self.value(scalar).shape().to_vec(),
                rhs: vec![1],
            });
        }
        let s = self.value(scalar).item();
        let value = {
            let vv = self.value(v);
            Tensor::new(vv.shape().to_vec(), vv.data().iter().map(|x| x * s).collect()).expect("shape preserved")
        };
        let rg = self.any_grad(&[scalar, v]);
        Ok(self.push(value, Op::ScaleBy { scalar, v }, rg))
    }

    /// Sum of all entries as a single-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Sum of equally shaped tensors, accumulated left to right.
    pub fn sum_n(&mut self, terms: &[Var]) -> Result<Var> {
        let first = *terms.first().ok_or(Error::Empty("sum_n"))?;
        for &t in &terms[1..] {
            self.same_shape("sum_n", first, t)?;
        }
        let mut acc = self.value(first).data().to_vec();
        for &t in &terms[1..] {
            for (a, b) in acc.iter_mut().zip(self.value(t).data()) {
                *a += b;
            }
        }
        let value = Tensor::new(self.value(first).shape().to_vec(), acc).expect("shape preserved");
        let rg = self.any_grad(terms);
        Ok(self.push(value, Op::SumN(terms.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Same-padded stride-1 cross-correlation followed by `pool x pool`
    /// max pooling. `input: [c, h, w]`, `kernels: [k, c, kh, kw]`,
    /// `bias: [k]`; the result is `[k, h / pool, w / pool]`.
    pub fn conv2d_maxpool(&mut self, input: Var, kernels: Var, bias: Var, pool: usize) -> Result<Var> {
        let (value, record) = conv::forward(self.value(input), self.value(kernels), self.value(bias), pool)?;
        let rg = self.any_grad(&[input, kernels, bias]);
        let record = record.bind(input, kernels, bias);
        Ok(self.push(value, Op::Conv(Box::new(record)), rg))
    }

    /// `-[y ln p + (1 - y) ln(1 - p)]` with `p` clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`. When `p` is a sigmoid node the
    /// gradient goes straight to its logit as `p - y`, which stays alive
    /// where the clamp is active; the sigmoid node itself then receives no
    /// adjoint from this loss.
    pub fn binary_cross_entropy(&mut self, p: Var, label: f64) -> Result<Var> {
        if self.value(p).len() != 1 {
            return Err(Error::Dimension {
                op: "binary_cross_entropy",
                lhs: self.value(p).shape().to_vec(),
                rhs: vec![1],
            });
        }
        let pc = self.value(p).item().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let loss = -(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln());
        if let Op::Sigmoid(logit) = self.nodes[p.0].op {
            let rg = self.any_grad(&[logit]);
            return Ok(self.push(Tensor::scalar(loss), Op::BceLogit { logit, p, label }, rg));
        }
        let rg = self.any_grad(&[p]);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, label }, rg))
    }

    /// Reverse sweep from the single-element node `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                lhs: self.value(root).shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatVec(w, x) => {
                let wv = self.value(*w);
                let q = wv.shape()[1];
                let xd = self.value(*x).data();
                acc(*w, &mut |dw| {
                    for (i, gi) in g.iter().enumerate() {
                        for (d, xj) in dw[i * q..(i + 1) * q].iter_mut().zip(xd) {
                            *d += gi * xj;
                        }
                    }
                });
                acc(*x, &mut |dx| {
                    for (i, gi) in g.iter().enumerate() {
                        for (d, wij) in dx.iter_mut().zip(&wv.data()[i * q..(i + 1) * q]) {
                            *d += gi * wij;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(*v, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Hadamard(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(bd) {
                        *d += g * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(ad) {
                        *d += g * x;
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * f)),
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                        *d += g * (1.0 - y * y);
                    }
                });
            }
            Op::OneMinus(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g)),
            Op::ScaleBy { scalar, v } => {
                let s = self.value(*scalar).item();
                let vd = self.value(*v).data();
                acc(*scalar, &mut |d| {
                    d[0] += g.iter().zip(vd).map(|(g, v)| g * v).sum::<f64>()
                });
                acc(*v, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s));
            }
            Op::SumAll(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::SumN(terms) => {
                for t in terms {
                    acc(*t, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
            Op::Reshape(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Conv(rec) => {
                let kv = self.value(rec.kernels);
                acc(rec.bias, &mut |d| rec.bias_grad(g, d));
                acc(rec.kernels, &mut |d| rec.kernel_grad(g, d));
                acc(rec.input, &mut |d| rec.input_grad(g, kv.data(), d));
            }
            Op::Bce { p, label } => {
                let pc = self.value(*p).item().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                let dp = (pc - label) / (pc * (1.0 - pc));
                acc(*p, &mut |d| d[0] += g[0] * dp);
            }
            Op::BceLogit { logit, p, label } => {
                let dl = self.value(*p).item() - label;
                acc(*logit, &mut |d| d[0] += g[0] * dl);
            }
        }
    }
}
