//! Reverse-mode tape over dense matrices.
//!
//! Every node holds a 2D array; scalars are `1 x 1`. Elementwise binary
//! operations broadcast along unit dimensions (a `1 x m` bias row against an
//! `n x m` batch, a `1 x 1` scalar against anything). Nodes are appended in
//! evaluation order, so parents always precede children and a single reverse
//! pass visits each node once.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis, Zip};

use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Tanh,
    Square,
    /// Sum of all entries, `1 x 1` result.
    Sum,
    /// Mean of all entries, `1 x 1` result.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
}

impl FromStr for UnaryOp {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "neg" => Self::Neg,
            "tanh" => Self::Tanh,
            "square" => Self::Square,
            "sum" => Self::Sum,
            "mean" => Self::Mean,
            other => return Err(AutodiffError::UnsupportedPrimitive(other.to_string())),
        })
    }
}

impl FromStr for BinaryOp {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "add" | "+" => Self::Add,
            "sub" | "-" => Self::Sub,
            "mul" | "*" => Self::Mul,
            "div" | "/" => Self::Div,
            "matmul" => Self::MatMul,
            other => return Err(AutodiffError::UnsupportedPrimitive(other.to_string())),
        })
    }
}

impl fmt::Display for BinaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Div => "div",
            Self::MatMul => "matmul",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf,
    Const,
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    /// `a * c` for a fixed real `c`.
    Scale(usize, f64),
    /// `a + c` for a fixed real `c`.
    Shift(usize),
}

impl Node {
    fn parents(&self) -> [Option<usize>; 2] {
        match *self {
            Node::Leaf | Node::Const => [None, None],
            Node::Unary(_, a) | Node::Scale(a, _) | Node::Shift(a) => [Some(a), None],
            Node::Binary(_, a, b) => [Some(a), Some(b)],
        }
    }
}

/// Single-use recording of one evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Array2<f64>>,
    tracked: Vec<bool>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Array2<f64>>>,
    visited: usize,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Number of nodes the backward sweep processed.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node, value: Array2<f64>) -> Var {
        let tracked = match node {
            Node::Leaf => true,
            Node::Const => false,
            _ => node.parents().iter().flatten().any(|&p| self.tracked[p]),
        };
        self.nodes.push(node);
        self.values.push(value);
        self.tracked.push(tracked);
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(Node::Leaf, value)
    }

    /// A value that gradients never flow into.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Node::Const, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.values[v.0]
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].dim()
    }

    /// Whether gradients can reach `v` from some leaf.
    pub fn is_tracked(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        let x = &self.values[a.0];
        let value = match op {
            UnaryOp::Neg => x.mapv(|v| -v),
            UnaryOp::Tanh => x.mapv(f64::tanh),
            UnaryOp::Square => x.mapv(|v| v * v),
            UnaryOp::Sum => Array2::from_elem((1, 1), x.sum()),
            UnaryOp::Mean => Array2::from_elem((1, 1), x.sum() / x.len() as f64),
        };
        self.push(Node::Unary(op, a.0), value)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (&self.values[a.0], &self.values[b.0]);
        let mismatch = || AutodiffError::ShapeMismatch { op: op.to_string(), left: x.dim(), right: y.dim() };
        let value = match op {
            BinaryOp::MatMul => {
                if x.ncols() != y.nrows() {
                    return Err(mismatch());
                }
                x.dot(y)
            }
            _ => {
                let shape = broadcast_shape(x.dim(), y.dim()).ok_or_else(mismatch)?;
                let xb = x.broadcast(shape).ok_or_else(mismatch)?;
                let yb = y.broadcast(shape).ok_or_else(mismatch)?;
                let f: fn(f64, f64) -> f64 = match op {
                    BinaryOp::Add => |p, q| p + q,
                    BinaryOp::Sub => |p, q| p - q,
                    BinaryOp::Mul => |p, q| p * q,
                    BinaryOp::Div => |p, q| p / q,
                    BinaryOp::MatMul => unreachable!(),
                };
                Zip::from(&xb).and(&yb).map_collect(|&p, &q| f(p, q))
            }
        };
        Ok(self.push(Node::Binary(op, a.0, b.0), value))
    }

    /// Applies an operation by name; unknown names are construction errors.
    pub fn apply(&mut self, name: &str, args: &[Var]) -> Result<Var, AutodiffError> {
        match args {
            [a] => Ok(self.unary(name.parse()?, *a)),
            [a, b] => self.binary(name.parse()?, *a, *b),
            _ => Err(AutodiffError::UnsupportedPrimitive(format!("{name}/{}", args.len()))),
        }
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.values[a.0].mapv(|v| v * c);
        self.push(Node::Scale(a.0, c), value)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let value = self.values[a.0].mapv(|v| v + c);
        self.push(Node::Shift(a.0), value)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Mean, a)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryOp::MatMul, a, b)
    }

    /// Reverse sweep from `output`, seeded with ones.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut adj = Adjoints { slots: vec![None; output.0 + 1], tracked: &self.tracked };
        adj.slots[output.0] = Some(Array2::ones(self.values[output.0].dim()));
        let mut visited = 0;

        for i in (0..=output.0).rev() {
            if !self.tracked[i] {
                continue;
            }
            let Some(g) = adj.slots[i].take() else {
                continue;
            };
            visited += 1;
            match self.nodes[i] {
                Node::Leaf | Node::Const => {
                    adj.slots[i] = Some(g);
                }
                Node::Scale(a, c) => adj.send(a, self.values[a].dim(), &g, &g, |gi, _| gi * c),
                Node::Shift(a) => adj.send_owned(a, g),
                Node::Unary(op, a) => {
                    let x = &self.values[a];
                    match op {
                        UnaryOp::Neg => adj.send(a, x.dim(), &g, &g, |gi, _| -gi),
                        UnaryOp::Tanh => adj.send(a, x.dim(), &g, &self.values[i], |gi, ti| gi * (1.0 - ti * ti)),
                        UnaryOp::Square => adj.send(a, x.dim(), &g, x, |gi, xi| 2.0 * gi * xi),
                        UnaryOp::Sum => adj.send_owned(a, Array2::from_elem(x.dim(), g[[0, 0]])),
                        UnaryOp::Mean => adj.send_owned(a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64)),
                    }
                }
                Node::Binary(op, a, b) => {
                    let (x, y) = (&self.values[a], &self.values[b]);
                    let (ta, tb) = (self.tracked[a], self.tracked[b]);
                    match op {
                        BinaryOp::MatMul => {
                            if ta {
                                adj.send_owned(a, g.dot(&y.t()));
                            }
                            if tb {
                                adj.send_owned(b, x.t().dot(&g));
                            }
                        }
                        BinaryOp::Add => {
                            if tb {
                                adj.send(b, y.dim(), &g, &g, |gi, _| gi);
                            }
                            if ta {
                                adj.send_owned(a, reduce_to(g, x.dim()));
                            }
                        }
                        BinaryOp::Sub => {
                            if tb {
                                adj.send(b, y.dim(), &g, &g, |gi, _| -gi);
                            }
                            if ta {
                                adj.send_owned(a, reduce_to(g, x.dim()));
                            }
                        }
                        BinaryOp::Mul => {
                            if ta {
                                adj.send(a, x.dim(), &g, y, |gi, yi| gi * yi);
                            }
                            if tb {
                                adj.send(b, y.dim(), &g, x, |gi, xi| gi * xi);
                            }
                        }
                        BinaryOp::Div => {
                            if ta {
                                adj.send(a, x.dim(), &g, y, |gi, yi| gi / yi);
                            }
                            if tb {
                                // d(x / y)/dy = -(x / y) / y
                                let out = &self.values[i];
                                let shape = g.dim();
                                let yb = y.broadcast(shape).expect("forward pass broadcast");
                                let c = Zip::from(&g).and(out).and(&yb).map_collect(|&gi, &oi, &yi| -gi * oi / yi);
                                adj.send_owned(b, reduce_to(c, y.dim()));
                            }
                        }
                    }
                }
            }
        }
        let Adjoints { slots: adjoints, .. } = adj;
        Gradients { adjoints, visited }
    }
}

/// Adjoint accumulators for one backward sweep.
struct Adjoints<'a> {
    slots: Vec<Option<Array2<f64>>>,
    tracked: &'a [bool],
}

impl Adjoints<'_> {
    fn send_owned(&mut self, slot: usize, contrib: Array2<f64>) {
        if !self.tracked[slot] {
            return;
        }
        match &mut self.slots[slot] {
            Some(acc) => *acc += &contrib,
            empty => *empty = Some(contrib),
        }
    }

    /// Adds `f(g, other)` elementwise into the adjoint of `slot`, whose value
    /// has shape `target`; `other` broadcasts against `g` and the result is
    /// summed down to `target` when `target` was broadcast in the forward pass.
    fn send(
        &mut self,
        slot: usize,
        target: (usize, usize),
        g: &Array2<f64>,
        other: &Array2<f64>,
        f: impl Fn(f64, f64) -> f64,
    ) {
        if !self.tracked[slot] {
            return;
        }
        if target == g.dim() && other.dim() == g.dim() {
            match &mut self.slots[slot] {
                Some(acc) => Zip::from(acc).and(g).and(other).for_each(|a, &gi, &oi| *a += f(gi, oi)),
                empty => *empty = Some(Zip::from(g).and(other).map_collect(|&gi, &oi| f(gi, oi))),
            }
            return;
        }
        let ob = other.broadcast(g.dim()).expect("forward pass broadcast");
        if target != g.dim() {
            let c = Zip::from(g).and(&ob).map_collect(|&gi, &oi| f(gi, oi));
            self.send_owned(slot, reduce_to(c, target));
            return;
        }
        match &mut self.slots[slot] {
            Some(acc) => Zip::from(acc).and(g).and(&ob).for_each(|a, &gi, &oi| *a += f(gi, oi)),
            empty => *empty = Some(Zip::from(g).and(&ob).map_collect(|&gi, &oi| f(gi, oi))),
        }
    }
}
