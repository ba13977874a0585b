//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node that
//! remembers its inputs and output value. Node ids grow monotonically and
//! every node's inputs have smaller ids, so walking the ids backwards is a
//! valid topological order for gradient propagation.
//!
//! A tape supports exactly one [`Tape::backward`] call. Gradients stay
//! readable afterwards, but recording new operations or calling backward a
//! second time fails with [`TensorError::TapeConsumed`]; build a fresh tape
//! for the next forward pass.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Negative slope used for attention logits unless a layer overrides it.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Relu,
    LeakyRelu(f64),
    Exp,
    Sqrt,
    Softplus,
    Scale(f64),
    Shift(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
        broadcast: Broadcast,
    },
    Unary {
        kind: UnaryKind,
        a: usize,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Softmax {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    Mse {
        a: usize,
        b: usize,
    },
    GatherRows {
        a: usize,
        index: Vec<usize>,
    },
    ScatterAddRows {
        a: usize,
        index: Vec<usize>,
    },
    ScaleRows {
        a: usize,
        w: usize,
    },
    AddRow {
        a: usize,
        b: usize,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    SelectCols {
        a: usize,
        cols: Vec<usize>,
    },
    Reshape {
        a: usize,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

/// Records one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Option<Vec<Option<Vec<f64>>>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn cols_of(shape: &[usize]) -> usize {
    match shape.len() {
        0 => 1,
        1 => shape[0],
        _ => shape[1..].iter().product(),
    }
}

fn rank2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() != 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: shape.to_vec(),
        });
    }
    Ok((shape[0], shape[1]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.grads.borrow().is_some()
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&self, tensor: &Tensor) -> Var<'_> {
        self.push_leaf(tensor, false, None)
    }

    /// Records a tensor, honouring its `requires_grad` flag.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        self.push_leaf(tensor, tensor.requires_grad(), None)
    }

    /// Records a named trainable tensor; see [`Tape::param_grads`].
    pub fn param(&self, name: &str, tensor: &Tensor) -> Var<'_> {
        self.push_leaf(tensor, true, Some(name.to_string()))
    }

    fn push_leaf(&self, tensor: &Tensor, requires_grad: bool, name: Option<String>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape: tensor.shape().to_vec(),
            value: tensor.values().to_vec(),
            op: Op::Leaf,
            requires_grad,
            name,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(
        &self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        inputs: &[usize],
    ) -> Result<Var<'_>> {
        if self.is_consumed() {
            return Err(TensorError::TapeConsumed);
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            name: None,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    fn value_of(&self, id: usize) -> (Vec<usize>, Vec<f64>) {
        let nodes = self.nodes.borrow();
        (nodes[id].shape.clone(), nodes[id].value.clone())
    }

    fn binary(&self, kind: BinaryKind, a: usize, b: usize) -> Result<Var<'_>> {
        let op_name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let (shape, value, broadcast) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a], &nodes[b]);
            let broadcast = if na.shape == nb.shape {
                Broadcast::Same
            } else if nb.value.len() == 1 {
                Broadcast::RhsScalar
            } else if na.value.len() == 1 {
                Broadcast::LhsScalar
            } else {
                return Err(TensorError::ShapeMismatch {
                    op: op_name,
                    lhs: na.shape.clone(),
                    rhs: nb.shape.clone(),
                });
            };
            let shape = if broadcast == Broadcast::LhsScalar {
                nb.shape.clone()
            } else {
                na.shape.clone()
            };
            let n = numel(&shape);
            if kind == BinaryKind::Div && nb.value.iter().any(|&v| v == 0.0) {
                return Err(TensorError::DivisionByZero { op: op_name });
            }
            let value = (0..n)
                .map(|i| {
                    let x = pick(&na.value, broadcast == Broadcast::LhsScalar, i);
                    let y = pick(&nb.value, broadcast == Broadcast::RhsScalar, i);
                    match kind {
                        BinaryKind::Add => x + y,
                        BinaryKind::Sub => x - y,
                        BinaryKind::Mul => x * y,
                        BinaryKind::Div => x / y,
                    }
                })
                .collect();
            (shape, value, broadcast)
        };
        self.push(
            op_name,
            shape,
            value,
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
            &[a, b],
        )
    }

    fn unary(&self, kind: UnaryKind, a: usize) -> Result<Var<'_>> {
        let op_name = match kind {
            UnaryKind::Relu => "relu",
            UnaryKind::LeakyRelu(_) => "leaky_relu",
            UnaryKind::Exp => "exp",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::Shift(_) => "shift",
        };
        let (shape, input) = self.value_of(a);
        let value = input
            .iter()
            .map(|&x| match kind {
                UnaryKind::Relu => x.max(0.0),
                UnaryKind::LeakyRelu(slope) => {
                    if x > 0.0 {
                        x
                    } else {
                        slope * x
                    }
                }
                UnaryKind::Exp => x.exp(),
                UnaryKind::Sqrt => x.sqrt(),
                UnaryKind::Softplus => softplus(x),
                UnaryKind::Scale(c) => c * x,
                UnaryKind::Shift(c) => x + c,
            })
            .collect();
        self.push(op_name, shape, value, Op::Unary { kind, a }, &[a])
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let first = parts.first().ok_or(TensorError::Rank {
                op: "concat_cols",
                expected: 2,
                shape: vec![],
            })?;
            let (rows, _) = rank2("concat_cols", &nodes[first.id].shape)?;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let (r, c) = rank2("concat_cols", &nodes[p.id].shape)?;
                if r != rows {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat_cols",
                        lhs: nodes[first.id].shape.clone(),
                        rhs: nodes[p.id].shape.clone(),
                    });
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut value = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &w) in parts.iter().zip(&widths) {
                    value.extend_from_slice(&nodes[p.id].value[r * w..(r + 1) * w]);
                }
            }
            (vec![rows, total], value)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push(
            "concat_cols",
            shape,
            value,
            Op::ConcatCols { parts: ids.clone() },
            &ids,
        )
    }

    /// Back-propagates from a scalar loss. Allowed once per tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if self.is_consumed() {
            return Err(TensorError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            if nodes[id].requires_grad {
                propagate(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        drop(nodes);
        *self.grads.borrow_mut() = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `var`.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.as_ref()?.get(var.id)?.as_ref()?;
        let nodes = self.nodes.borrow();
        if !nodes[var.id].requires_grad {
            return None;
        }
        Tensor::new(nodes[var.id].shape.clone(), g.clone()).ok()
    }

    /// Gradients of every named parameter reached by the last backward pass.
    /// A parameter recorded more than once has its gradients summed.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let grads = self.grads.borrow();
        let Some(grads) = grads.as_ref() else {
            return out;
        };
        let nodes = self.nodes.borrow();
        for (node, g) in nodes.iter().zip(grads) {
            if let (Some(name), Some(g)) = (&node.name, g) {
                match out.get_mut(name) {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => {
                        out.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        out
    }
}

fn pick(values: &[f64], broadcast: bool, i: usize) -> f64 {
    if broadcast {
        values[0]
    } else {
        values[i]
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, contribution: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contribution),
    }
}

fn reduce_if(broadcast: bool, g: Vec<f64>) -> Vec<f64> {
    if broadcast {
        vec![g.iter().sum()]
    } else {
        g
    }
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Binary {
            kind,
            a,
            b,
            broadcast,
        } => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let ls = *broadcast == Broadcast::LhsScalar;
            let rs = *broadcast == Broadcast::RhsScalar;
            let n = g.len();
            let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                BinaryKind::Add => (g.to_vec(), g.to_vec()),
                BinaryKind::Sub => (g.to_vec(), g.iter().map(|x| -x).collect()),
                BinaryKind::Mul => (
                    (0..n).map(|i| g[i] * pick(vb, rs, i)).collect(),
                    (0..n).map(|i| g[i] * pick(va, ls, i)).collect(),
                ),
                BinaryKind::Div => (
                    (0..n).map(|i| g[i] / pick(vb, rs, i)).collect(),
                    (0..n)
                        .map(|i| {
                            let y = pick(vb, rs, i);
                            -g[i] * pick(va, ls, i) / (y * y)
                        })
                        .collect(),
                ),
            };
            accumulate(nodes, grads, *a, reduce_if(ls, ga));
            accumulate(nodes, grads, *b, reduce_if(rs, gb));
        }
        Op::Unary { kind, a } => {
            let x = &nodes[*a].value;
            let y = &node.value;
            let ga = (0..g.len())
                .map(|i| match kind {
                    UnaryKind::Relu => {
                        if x[i] > 0.0 {
                            g[i]
                        } else {
                            0.0
                        }
                    }
                    UnaryKind::LeakyRelu(slope) => {
                        if x[i] > 0.0 {
                            g[i]
                        } else {
                            slope * g[i]
                        }
                    }
                    UnaryKind::Exp => g[i] * y[i],
                    UnaryKind::Sqrt => g[i] / (2.0 * y[i]),
                    UnaryKind::Softplus => g[i] * sigmoid(x[i]),
                    UnaryKind::Scale(c) => c * g[i],
                    UnaryKind::Shift(_) => g[i],
                })
                .collect();
            accumulate(nodes, grads, *a, ga);
        }
        Op::MatMul { a, b } => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * vb[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                accumulate(nodes, grads, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = va[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += x * g[i * n + j];
                        }
                    }
                }
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Softmax {
            a,
            outer,
            len,
            inner,
        } => {
            let y = &node.value;
            let mut ga = vec![0.0; y.len()];
            for o in 0..*outer {
                for i in 0..*inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let dot: f64 = (0..*len).map(|l| g[at(l)] * y[at(l)]).sum();
                    for l in 0..*len {
                        ga[at(l)] = y[at(l)] * (g[at(l)] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *a, ga);
        }
        Op::Sum { a } => {
            let n = nodes[*a].value.len();
            accumulate(nodes, grads, *a, vec![g[0]; n]);
        }
        Op::Mean { a } => {
            let n = nodes[*a].value.len();
            accumulate(nodes, grads, *a, vec![g[0] / n as f64; n]);
        }
        Op::Mse { a, b } => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let scale = 2.0 * g[0] / va.len() as f64;
            let ga: Vec<f64> = va.iter().zip(vb).map(|(x, y)| scale * (x - y)).collect();
            let gb = ga.iter().map(|x| -x).collect();
            accumulate(nodes, grads, *a, ga);
            accumulate(nodes, grads, *b, gb);
        }
        Op::GatherRows { a, index } => {
            let cols = cols_of(&node.shape);
            let mut ga = vec![0.0; nodes[*a].value.len()];
            for (r, &src) in index.iter().enumerate() {
                for c in 0..cols {
                    ga[src * cols + c] += g[r * cols + c];
                }
            }
            accumulate(nodes, grads, *a, ga);
        }
        Op::ScatterAddRows { a, index } => {
            let cols = cols_of(&node.shape);
            let mut ga = vec![0.0; nodes[*a].value.len()];
            for (r, &dst) in index.iter().enumerate() {
                ga[r * cols..(r + 1) * cols].copy_from_slice(&g[dst * cols..(dst + 1) * cols]);
            }
            accumulate(nodes, grads, *a, ga);
        }
        Op::ScaleRows { a, w } => {
            let cols = cols_of(&node.shape);
            let (va, vw) = (&nodes[*a].value, &nodes[*w].value);
            let ga = (0..g.len()).map(|i| g[i] * vw[i / cols]).collect();
            let gw = (0..vw.len())
                .map(|r| (0..cols).map(|c| g[r * cols + c] * va[r * cols + c]).sum())
                .collect();
            accumulate(nodes, grads, *a, ga);
            accumulate(nodes, grads, *w, gw);
        }
        Op::AddRow { a, b } => {
            let cols = cols_of(&node.shape);
            let mut gb = vec![0.0; cols];
            for (i, gi) in g.iter().enumerate() {
                gb[i % cols] += gi;
            }
            accumulate(nodes, grads, *a, g.to_vec());
            accumulate(nodes, grads, *b, gb);
        }
        Op::ConcatCols { parts } => {
            let rows = node.shape[0];
            let total = node.shape[1];
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].shape[1];
                let mut gp = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                }
                accumulate(nodes, grads, p, gp);
                offset += w;
            }
        }
        Op::SelectCols { a, cols } => {
            let src_cols = cols_of(&nodes[*a].shape);
            let rows = node.shape[0];
            let mut ga = vec![0.0; nodes[*a].value.len()];
            for r in 0..rows {
                for (j, &c) in cols.iter().enumerate() {
                    ga[r * src_cols + c] += g[r * cols.len() + j];
                }
            }
            accumulate(nodes, grads, *a, ga);
        }
        Op::Reshape { a } => accumulate(nodes, grads, *a, g.to_vec()),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn value(&self) -> Tensor {
        let (shape, value) = self.tape.value_of(self.id);
        Tensor::new(shape, value).expect("tape node holds a consistent tensor")
    }

    pub fn values(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// First element; meant for scalar losses.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(BinaryKind::Add, self.id, other.id)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(BinaryKind::Sub, self.id, other.id)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(BinaryKind::Mul, self.id, other.id)
    }

    /// Elementwise division; any exact zero in the divisor is an error.
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.binary(BinaryKind::Div, self.id, other.id)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.tape.unary(UnaryKind::Relu, self.id)
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.tape.unary(UnaryKind::LeakyRelu(slope), self.id)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.tape.unary(UnaryKind::Exp, self.id)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.tape.unary(UnaryKind::Sqrt, self.id)
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(self) -> Result<Var<'t>> {
        self.tape.unary(UnaryKind::Softplus, self.id)
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        self.tape.unary(UnaryKind::Scale(factor), self.id)
    }

    pub fn shift(self, offset: f64) -> Result<Var<'t>> {
        self.tape.unary(UnaryKind::Shift(offset), self.id)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let (shape, value) = {
            let nodes = tape.nodes.borrow();
            let (sa, sb) = (&nodes[self.id].shape, &nodes[other.id].shape);
            let (m, k) = rank2("matmul", sa)?;
            let (k2, n) = rank2("matmul", sb)?;
            if k != k2 {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: sa.clone(),
                    rhs: sb.clone(),
                });
            }
            let (va, vb) = (&nodes[self.id].value, &nodes[other.id].value);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let x = va[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let row = &vb[p * n..(p + 1) * n];
                    for (o, y) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                        *o += x * y;
                    }
                }
            }
            (vec![m, n], out)
        };
        tape.push(
            "matmul",
            shape,
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        )
    }

    /// Softmax along `axis`, stabilised by subtracting the per-slice maximum.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let (shape, x) = self.tape.value_of(self.id);
        if axis >= shape.len() {
            return Err(TensorError::Axis { axis, shape });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| x[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (x[at(l)] - max).exp();
                    y[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    y[at(l)] /= total;
                }
            }
        }
        self.tape.push(
            "softmax",
            shape,
            y,
            Op::Softmax {
                a: self.id,
                outer,
                len,
                inner,
            },
            &[self.id],
        )
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let s = self.values().iter().sum();
        self.tape
            .push("sum", vec![1], vec![s], Op::Sum { a: self.id }, &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = self.values();
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.tape
            .push("mean", vec![1], vec![m], Op::Mean { a: self.id }, &[self.id])
    }

    /// Mean of squared differences against `target`.
    pub fn mse(self, target: Var<'t>) -> Result<Var<'t>> {
        let (sa, va) = self.tape.value_of(self.id);
        let (sb, vb) = self.tape.value_of(target.id);
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: sa,
                rhs: sb,
            });
        }
        let n = va.len().max(1) as f64;
        let loss = va.iter().zip(&vb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
        self.tape.push(
            "mse",
            vec![1],
            vec![loss],
            Op::Mse {
                a: self.id,
                b: target.id,
            },
            &[self.id, target.id],
        )
    }

    /// Row `r` of the output is row `index[r]` of `self`.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let (shape, v) = self.tape.value_of(self.id);
        let (rows, cols) = rank2("gather_rows", &shape)?;
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            out.extend_from_slice(&v[i * cols..(i + 1) * cols]);
        }
        self.tape.push(
            "gather_rows",
            vec![index.len(), cols],
            out,
            Op::GatherRows {
                a: self.id,
                index: index.to_vec(),
            },
            &[self.id],
        )
    }

    /// Sums row `r` of `self` into row `index[r]` of a `rows`-row output.
    pub fn scatter_add_rows(self, index: &[usize], rows: usize) -> Result<Var<'t>> {
        let (shape, v) = self.tape.value_of(self.id);
        let (n, cols) = rank2("scatter_add_rows", &shape)?;
        if n != index.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: shape,
                rhs: vec![index.len()],
            });
        }
        let mut out = vec![0.0; rows * cols];
        for (r, &dst) in index.iter().enumerate() {
            if dst >= rows {
                return Err(TensorError::Index {
                    op: "scatter_add_rows",
                    index: dst,
                    bound: rows,
                });
            }
            for c in 0..cols {
                out[dst * cols + c] += v[r * cols + c];
            }
        }
        self.tape.push(
            "scatter_add_rows",
            vec![rows, cols],
            out,
            Op::ScatterAddRows {
                a: self.id,
                index: index.to_vec(),
            },
            &[self.id],
        )
    }

    /// Multiplies row `r` by `weights[r]`; `weights` holds one value per row.
    pub fn scale_rows(self, weights: Var<'t>) -> Result<Var<'t>> {
        let (sa, va) = self.tape.value_of(self.id);
        let (sw, vw) = self.tape.value_of(weights.id);
        let (rows, cols) = rank2("scale_rows", &sa)?;
        if vw.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: sa,
                rhs: sw,
            });
        }
        let out = (0..rows * cols).map(|i| va[i] * vw[i / cols]).collect();
        self.tape.push(
            "scale_rows",
            vec![rows, cols],
            out,
            Op::ScaleRows {
                a: self.id,
                w: weights.id,
            },
            &[self.id, weights.id],
        )
    }

    /// Adds a row vector (a bias) to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (sa, va) = self.tape.value_of(self.id);
        let (sb, vb) = self.tape.value_of(row.id);
        let (rows, cols) = rank2("add_row", &sa)?;
        if vb.len() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = (0..rows * cols).map(|i| va[i] + vb[i % cols]).collect();
        self.tape.push(
            "add_row",
            vec![rows, cols],
            out,
            Op::AddRow {
                a: self.id,
                b: row.id,
            },
            &[self.id, row.id],
        )
    }

    pub fn select_cols(self, cols: &[usize]) -> Result<Var<'t>> {
        let (shape, v) = self.tape.value_of(self.id);
        let (rows, width) = rank2("select_cols", &shape)?;
        if let Some(&bad) = cols.iter().find(|&&c| c >= width) {
            return Err(TensorError::Index {
                op: "select_cols",
                index: bad,
                bound: width,
            });
        }
        let mut out = Vec::with_capacity(rows * cols.len());
        for r in 0..rows {
            out.extend(cols.iter().map(|&c| v[r * width + c]));
        }
        self.tape.push(
            "select_cols",
            vec![rows, cols.len()],
            out,
            Op::SelectCols {
                a: self.id,
                cols: cols.to_vec(),
            },
            &[self.id],
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let (old, v) = self.tape.value_of(self.id);
        if numel(shape) != v.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: old,
                rhs: shape.to_vec(),
            });
        }
        self.tape
            .push("reshape", shape.to_vec(), v, Op::Reshape { a: self.id }, &[self.id])
    }

    pub fn backward(self) -> Result<()> {
        self.tape.backward(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_product() {
        let tape = Tape::new();
        let eye = tape.constant(&Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let m = tape.constant(&Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        assert_eq!(eye.matmul(m).unwrap().values(), vec![1.0, 2.0, 3.0, 4.0]);

        let row = tape.constant(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let col = tape.constant(&Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let p = row.matmul(col).unwrap();
        assert_eq!(p.shape(), vec![1, 1]);
        assert_eq!(p.item(), 11.0);

        let zero = tape.constant(&Tensor::zeros(&[3, 2]));
        assert!(zero.matmul(m).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(&[2, 3]));
        let b = tape.constant(&Tensor::zeros(&[2, 3]));
        match a.matmul(b) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn elementwise_definitions() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().unwrap().values(), vec![0.0, 0.0, 2.0]);

        let zero = tape.constant(&Tensor::scalar(0.0));
        assert_eq!(x.add(zero).unwrap().values(), x.values());

        let y = tape.constant(&Tensor::vector(vec![-10.0]));
        assert!(close(&y.leaky_relu(0.2).unwrap().values(), &[-2.0], 1e-12));
    }

    #[test]
    fn broadcasting_is_scalar_or_same_shape_only() {
        let tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(&[2, 3]));
        let b = tape.constant(&Tensor::zeros(&[3]));
        assert!(matches!(a.add(b), Err(TensorError::ShapeMismatch { .. })));
        let s = tape.constant(&Tensor::scalar(2.0));
        assert_eq!(s.mul(a).unwrap().shape(), vec![2, 3]);
    }

    #[test]
    fn division_by_exact_zero_fails() {
        let tape = Tape::new();
        let a = tape.constant(&Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(&Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(a.div(b), Err(TensorError::DivisionByZero { .. })));
    }

    #[test]
    fn non_finite_forward_is_rejected() {
        let tape = Tape::new();
        let a = tape.constant(&Tensor::vector(vec![-1.0]));
        assert!(matches!(a.sqrt(), Err(TensorError::NonFinite { .. })));
        let big = tape.constant(&Tensor::vector(vec![1e6]));
        assert!(matches!(big.exp(), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn softmax_cases() {
        let tape = Tape::new();
        for c in [-3.0, 0.0, 7.5, 1e6] {
            let x = tape.constant(&Tensor::vector(vec![c, c]));
            assert!(close(&x.softmax(0).unwrap().values(), &[0.5, 0.5], 1e-15));
        }
        let x = tape.constant(&Tensor::vector(vec![1000.0, 0.0]));
        let y = x.softmax(0).unwrap().values();
        assert!((y[0] - 1.0).abs() < 1e-12 && y[1] >= 0.0 && y[1] < 1e-300);

        let x = tape.constant(&Tensor::vector(vec![1f64.ln(), 3f64.ln()]));
        assert!(close(&x.softmax(0).unwrap().values(), &[0.25, 0.75], 1e-12));
    }

    #[test]
    fn softmax_along_rows_and_columns() {
        let tape = Tape::new();
        let m = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        let x = tape.constant(&m);
        let by_row = x.softmax(1).unwrap().value();
        for r in 0..2 {
            assert!((by_row.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let by_col = x.softmax(0).unwrap().value();
        for c in 0..3 {
            assert!((by_col.get(0, c) + by_col.get(1, c) - 1.0).abs() < 1e-9);
        }
        assert!(matches!(x.softmax(2), Err(TensorError::Axis { .. })));
    }

    #[test]
    fn mse_values() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(x.mse(x).unwrap().item(), 0.0);
        let z = tape.constant(&Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(x.mse(z).unwrap().item(), 2.5);
        let five = tape.constant(&Tensor::vector(vec![5.0]));
        let two = tape.constant(&Tensor::vector(vec![2.0]));
        assert_eq!(five.mse(two).unwrap().item(), 9.0);
        let three = tape.constant(&Tensor::zeros(&[3]));
        assert!(matches!(x.mse(three), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[2, 3]).with_requires_grad(true));
        x.sum().unwrap().backward().unwrap();
        assert_eq!(tape.grad(x).unwrap().values(), &[1.0; 6]);
    }

    #[test]
    fn backward_scalar_chain_rule() {
        // loss = (w x - y)^2 with w = 1, x = 2, y = 0: d/dw = 2 (w x - y) x = 8
        let tape = Tape::new();
        let w = tape.param("w", &Tensor::scalar(1.0));
        let x = tape.constant(&Tensor::scalar(2.0));
        let y = tape.constant(&Tensor::scalar(0.0));
        let loss = w.mul(x).unwrap().mse(y).unwrap();
        loss.backward().unwrap();
        assert_eq!(tape.grad(w).unwrap().values(), &[8.0]);
        assert_eq!(tape.param_grads()["w"], vec![8.0]);
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn second_backward_is_an_error() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0).with_requires_grad(true));
        let y = x.mul(x).unwrap();
        y.backward().unwrap();
        assert_eq!(tape.grad(x).unwrap().values(), &[6.0]);
        assert_eq!(y.backward(), Err(TensorError::TapeConsumed));
        assert!(matches!(x.relu(), Err(TensorError::TapeConsumed)));
        // gradients survive the failed call
        assert_eq!(tape.grad(x).unwrap().values(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[2]).with_requires_grad(true));
        assert_eq!(x.backward(), Err(TensorError::NonScalarLoss(vec![2])));
    }

    #[test]
    fn unreached_params_get_no_gradient() {
        let tape = Tape::new();
        let used = tape.param("used", &Tensor::scalar(2.0));
        let _unused = tape.param("unused", &Tensor::scalar(5.0));
        used.mul(used).unwrap().backward().unwrap();
        let grads = tape.param_grads();
        assert_eq!(grads["used"], vec![4.0]);
        assert!(!grads.contains_key("unused"));
    }

    #[test]
    fn repeated_param_gradients_sum() {
        let tape = Tape::new();
        let t = Tensor::scalar(3.0);
        let a = tape.param("p", &t);
        let b = tape.param("p", &t);
        a.mul(b).unwrap().backward().unwrap();
        assert_eq!(tape.param_grads()["p"], vec![6.0]);
    }

    #[test]
    fn gather_scatter_roundtrip_shapes() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let g = x.gather_rows(&[1, 1, 0]).unwrap();
        assert_eq!(g.values(), vec![3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let s = g.scatter_add_rows(&[0, 0, 1], 2).unwrap();
        assert_eq!(s.values(), vec![6.0, 8.0, 1.0, 2.0]);
        assert!(matches!(x.gather_rows(&[2]), Err(TensorError::Index { .. })));
    }
}
