//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value to the [`Tape`];
//! [`Tape::backward`] walks the tape in reverse (which is a valid reverse
//! topological order, since nodes only ever reference earlier nodes) and
//! accumulates gradients into every node that requires them.
//!
//! Rank 2 inputs are treated as minibatches: `concat`, `softmax`,
//! `log_softmax` and `gather` act row by row.

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A deliberately wrong backward rule, used as a negative control for the
/// gradient checkers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Sigmoid backward drops the `(1 - σ)` factor.
    SigmoidBackward,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    Concat(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    SelectRows(Vec<Var>, Vec<usize>),
    AddBias(Var, Var),
    Narrow(Var, usize),
    RowScale(Var, Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// An append-only record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

/// Lazily materialized adjoint buffer of a parent that wants gradient.
fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Parameters live outside the tape and survive.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient, if backward has reached this node.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient or zeros of the node's shape.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.value(v).shape))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input (parameter or probe point).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the value into a gradient-stopped node.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0] {
            return Err(shape_err("matmul", av, bv));
        }
        let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &av.data, false, &bv.data, false, 0.0, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: [m × k]`, `b: [n × k]`; the layout of a linear layer
    /// applied to a batch of row vectors.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[1] {
            return Err(shape_err("matmul_nt", av, bv));
        }
        let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[0]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &av.data, false, &bv.data, true, 0.0, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulNt(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        let shape = av.shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape, data }, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let value = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|v| f(*v)).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some((index, &value)) = self
            .value(x)
            .data
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0))
        {
            return Err(Error::Domain { op: "log", index, value });
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    /// Joins two vectors, or two batches of row vectors along the columns.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = match (av.shape.as_slice(), bv.shape.as_slice()) {
            ([m], [n]) => {
                let mut data = Vec::with_capacity(m + n);
                data.extend_from_slice(&av.data);
                data.extend_from_slice(&bv.data);
                Tensor { shape: vec![m + n], data }
            }
            ([r, m], [r2, n]) if r == r2 => {
                let mut data = Vec::with_capacity(r * (m + n));
                for row in 0..*r {
                    data.extend_from_slice(&av.data[row * m..(row + 1) * m]);
                    data.extend_from_slice(&bv.data[row * n..(row + 1) * n]);
                }
                Tensor { shape: vec![*r, m + n], data }
            }
            _ => return Err(shape_err("concat", av, bv)),
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    fn check_rowwise(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let xv = self.value(x);
        if xv.rank() > 2 || xv.numel() == 0 {
            return Err(shape_err(op, xv, xv));
        }
        if let Some((index, &value)) = xv.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain { op, index, value });
        }
        Ok(xv.as_matrix())
    }

    /// Max-shifted softmax over a vector, or over each row of a matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.check_rowwise("softmax", x)?;
        let xv = self.value(x);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = xv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        let shape = xv.shape.clone();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor { shape, data }, Op::Softmax(x), rg))
    }

    /// Fused `log(softmax(x))`, computed as `x - max - log Σ exp(x - max)`.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.check_rowwise("log_softmax", x)?;
        let xv = self.value(x);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = xv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, v) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = v - max - lse;
            }
        }
        let shape = xv.shape.clone();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor { shape, data }, Op::LogSoftmax(x), rg))
    }

    /// Picks `x[r, index[r]]` from every row; the result has one entry per row.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.as_matrix();
        if xv.rank() > 2 || index.len() != rows {
            return Err(Error::Shape {
                op: "gather",
                left: xv.shape.clone(),
                right: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= cols) {
            return Err(Error::contract(format!("gather index {bad} out of range 0..{cols}")));
        }
        let data = index.iter().enumerate().map(|(r, &i)| xv.data[r * cols + i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor { shape: vec![rows], data },
            Op::Gather(x, index.to_vec()),
            rg,
        ))
    }

    /// Row `r` of the output is row `r` of `choices[index[r]]`.
    pub fn select_rows(&mut self, choices: &[Var], index: &[usize]) -> Result<Var> {
        let first = choices
            .first()
            .ok_or_else(|| Error::contract("select_rows needs at least one choice"))?;
        let shape = self.value(*first).shape.clone();
        for c in choices {
            if self.value(*c).shape != shape {
                return Err(shape_err("select_rows", self.value(*first), self.value(*c)));
            }
        }
        let (rows, cols) = self.value(*first).as_matrix();
        if index.len() != rows {
            return Err(Error::Shape {
                op: "select_rows",
                left: shape,
                right: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= choices.len()) {
            return Err(Error::contract(format!(
                "select_rows index {bad} out of range 0..{}",
                choices.len()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &i) in index.iter().enumerate() {
            data.extend_from_slice(self.value(choices[i]).row(r));
        }
        let rg = self.rg(choices);
        Ok(self.push(
            Tensor { shape, data },
            Op::SelectRows(choices.to_vec(), index.to_vec()),
            rg,
        ))
    }

    /// Adds the vector `bias: [n]` to every row of `x: [rows × n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (rows, cols) = xv.as_matrix();
        if xv.rank() != 2 || bv.shape != [cols] {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut data = xv.data.clone();
        for r in 0..rows {
            add_into(&mut data[r * cols..(r + 1) * cols], &bv.data);
        }
        let shape = xv.shape.clone();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor { shape, data }, Op::AddBias(x, bias), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.as_matrix();
        if xv.rank() != 2 || start + len > cols {
            return Err(Error::Shape {
                op: "narrow",
                left: xv.shape.clone(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.data[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor { shape: vec![rows, len], data },
            Op::Narrow(x, start),
            rg,
        ))
    }

    /// Multiplies row `r` of `x` by `s[r]`.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let (rows, cols) = xv.as_matrix();
        if xv.rank() != 2 || sv.shape != [rows] {
            return Err(shape_err("row_scale", xv, sv));
        }
        let mut data = xv.data.clone();
        for r in 0..rows {
            data[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v *= sv.data[r]);
        }
        let shape = xv.shape.clone();
        let rg = self.rg(&[x, s]);
        Ok(self.push(Tensor { shape, data }, Op::RowScale(x, s), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data.iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let total = xv.data.iter().sum::<f64>() / xv.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), Op::Mean(x), rg)
    }

    /// Reverse pass from a scalar root. Gradients accumulate into whatever
    /// earlier passes left behind; call [`Tape::zero_grads`] to reset.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_shape = &self.nodes[root.0].value.shape;
        if root_shape.as_slice() != [1] {
            return Err(Error::contract(format!(
                "backward needs a scalar root of shape [1], got {root_shape:?}"
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut adj);
            }
            adj[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(adj) {
            let Some(g) = g else { continue };
            if !node.requires_grad {
                continue;
            }
            match &mut node.grad {
                Some(acc) => add_into(&mut acc.data, &g),
                None => {
                    node.grad = Some(Tensor {
                        shape: node.value.shape.clone(),
                        data: g,
                    })
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! with_slot {
            ($v:expr, |$d:ident| $body:expr) => {
                if let Some($d) = slot(nodes, adj, $v) {
                    $body
                }
            };
        }
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                with_slot!(*a, |da| gemm(m, n, k, g, false, &bv.data, true, 1.0, da));
                with_slot!(*b, |db| gemm(k, m, n, &av.data, true, g, false, 1.0, db));
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[0]);
                with_slot!(*a, |da| gemm(m, n, k, g, false, &bv.data, false, 1.0, da));
                with_slot!(*b, |db| gemm(n, m, k, g, true, &av.data, false, 1.0, db));
            }
            Op::Add(a, b) => {
                with_slot!(*a, |da| add_into(da, g));
                with_slot!(*b, |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                with_slot!(*a, |da| add_into(da, g));
                with_slot!(*b, |db| db.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
                with_slot!(*a, |da| {
                    for ((d, g), bv) in da.iter_mut().zip(g).zip(bv) {
                        *d += g * bv;
                    }
                });
                with_slot!(*b, |db| {
                    for ((d, g), av) in db.iter_mut().zip(g).zip(av) {
                        *d += g * av;
                    }
                });
            }
            Op::Scale(x, c) => with_slot!(*x, |dx| {
                dx.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)
            }),
            Op::Neg(x) => with_slot!(*x, |dx| dx.iter_mut().zip(g).for_each(|(d, g)| *d -= g)),
            Op::Sigmoid(x) => {
                let faulty = self.fault == Some(Fault::SigmoidBackward);
                with_slot!(*x, |dx| {
                    for ((d, g), s) in dx.iter_mut().zip(g).zip(&y.data) {
                        let local = if faulty { *s } else { s * (1.0 - s) };
                        *d += g * local;
                    }
                });
            }
            Op::Tanh(x) => with_slot!(*x, |dx| {
                for ((d, g), t) in dx.iter_mut().zip(g).zip(&y.data) {
                    *d += g * (1.0 - t * t);
                }
            }),
            Op::Log(x) => {
                let xv = &nodes[x.0].value.data;
                with_slot!(*x, |dx| {
                    for ((d, g), v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += g / v;
                    }
                });
            }
            Op::Exp(x) => with_slot!(*x, |dx| {
                for ((d, g), e) in dx.iter_mut().zip(g).zip(&y.data) {
                    *d += g * e;
                }
            }),
            Op::Concat(a, b) => {
                let (rows, m) = nodes[a.0].value.as_matrix();
                let n = nodes[b.0].value.as_matrix().1;
                with_slot!(*a, |da| {
                    for r in 0..rows {
                        add_into(&mut da[r * m..(r + 1) * m], &g[r * (m + n)..r * (m + n) + m]);
                    }
                });
                with_slot!(*b, |db| {
                    for r in 0..rows {
                        add_into(
                            &mut db[r * n..(r + 1) * n],
                            &g[r * (m + n) + m..(r + 1) * (m + n)],
                        );
                    }
                });
            }
            Op::Softmax(x) => {
                let (rows, cols) = y.as_matrix();
                with_slot!(*x, |dx| {
                    for r in 0..rows {
                        let p = y.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = gr.iter().zip(p).map(|(g, p)| g * p).sum();
                        for ((d, g), p) in dx[r * cols..(r + 1) * cols].iter_mut().zip(gr).zip(p) {
                            *d += p * (g - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let (rows, cols) = y.as_matrix();
                with_slot!(*x, |dx| {
                    for r in 0..rows {
                        let ly = y.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let total: f64 = gr.iter().sum();
                        for ((d, g), l) in dx[r * cols..(r + 1) * cols].iter_mut().zip(gr).zip(ly) {
                            *d += g - l.exp() * total;
                        }
                    }
                });
            }
            Op::Gather(x, index) => {
                let cols = nodes[x.0].value.as_matrix().1;
                with_slot!(*x, |dx| {
                    for (r, &i) in index.iter().enumerate() {
                        dx[r * cols + i] += g[r];
                    }
                });
            }
            Op::SelectRows(choices, index) => {
                let cols = y.as_matrix().1;
                for (r, &i) in index.iter().enumerate() {
                    with_slot!(choices[i], |dc| {
                        add_into(&mut dc[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols])
                    });
                }
            }
            Op::AddBias(x, bias) => {
                let (rows, cols) = y.as_matrix();
                with_slot!(*x, |dx| add_into(dx, g));
                with_slot!(*bias, |db| {
                    for r in 0..rows {
                        add_into(db, &g[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::Narrow(x, start) => {
                let (rows, len) = y.as_matrix();
                let cols = nodes[x.0].value.as_matrix().1;
                with_slot!(*x, |dx| {
                    for r in 0..rows {
                        add_into(
                            &mut dx[r * cols + start..r * cols + start + len],
                            &g[r * len..(r + 1) * len],
                        );
                    }
                });
            }
            Op::RowScale(x, s) => {
                let (rows, cols) = y.as_matrix();
                let (xv, sv) = (&nodes[x.0].value.data, &nodes[s.0].value.data);
                with_slot!(*x, |dx| {
                    for r in 0..rows {
                        for c in r * cols..(r + 1) * cols {
                            dx[c] += g[c] * sv[r];
                        }
                    }
                });
                with_slot!(*s, |ds| {
                    for r in 0..rows {
                        ds[r] += (r * cols..(r + 1) * cols).map(|c| g[c] * xv[c]).sum::<f64>();
                    }
                });
            }
            Op::Sum(x) => with_slot!(*x, |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = nodes[x.0].value.numel() as f64;
                with_slot!(*x, |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    /// Analytic gradient of a scalar graph vs. central differences, for each input.
    fn fd_check(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
        let eps = 1e-5;
        let eval = |xs: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
            let out = build(&mut tape, &vars);
            tape.value(out).item()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.backward(out).unwrap();
        let mut worst: f64 = 0.0;
        for (i, v) in vars.iter().enumerate() {
            let analytic = tape.grad_or_zeros(*v);
            for j in 0..inputs[i].numel() {
                let mut plus = inputs.to_vec();
                let mut minus = inputs.to_vec();
                plus[i].data[j] += eps;
                minus[i].data[j] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic.data[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let id = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let col = t.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let out = t.matmul(id, col).unwrap();
        assert_eq!(t.value(out).data, vec![3.0, 4.0]);
        let row = t.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let out = t.matmul(row, col).unwrap();
        assert_eq!(t.value(out).shape, vec![1, 1]);
        assert_eq!(t.value(out).data, vec![11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected a shape error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, &[3, 4], -2.0, 2.0);
        let b = random(&mut rng, &[4, 2], -2.0, 2.0);
        let err = fd_check(&[a.clone(), b.clone()], |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            t.sum(m)
        });
        assert!(err < 1e-6, "{err}");
        // weight the output so the check is not symmetric in the entries
        let w = random(&mut rng, &[3, 2], -2.0, 2.0);
        let bt = random(&mut rng, &[2, 4], -2.0, 2.0);
        let err = fd_check(&[a, bt], |t, v| {
            let m = t.matmul_nt(v[0], v[1]).unwrap();
            let w = t.constant(w.clone());
            let p = t.mul(m, w).unwrap();
            t.sum(p)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn activation_fixed_points() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        let h = t.tanh(z);
        assert_eq!(t.value(s).item(), 0.5);
        assert_eq!(t.value(h).item(), 0.0);
        assert!((sigmoid(-800.0)).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn sigmoid_gradient_at_point_three() {
        let err = fd_check(&[Tensor::scalar(0.3)], |t, v| {
            let s = t.sigmoid(v[0]);
            t.sum(s)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn every_op_passes_finite_differences_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = random(&mut rng, &[3, 4], -2.0, 2.0);
            let y = random(&mut rng, &[3, 4], -2.0, 2.0);
            let pos = random(&mut rng, &[3, 4], 0.1, 2.0);
            let w = random(&mut rng, &[3, 4], -2.0, 2.0);
            let bias = random(&mut rng, &[4], -2.0, 2.0);
            let s = random(&mut rng, &[3], -2.0, 2.0);
            type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
            let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
                ("add", vec![x.clone(), y.clone()], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
                ("sub", vec![x.clone(), y.clone()], Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
                ("mul", vec![x.clone(), y.clone()], Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
                ("scale", vec![x.clone()], Box::new(|t, v| t.scale(v[0], -1.7))),
                ("neg", vec![x.clone()], Box::new(|t, v| t.neg(v[0]))),
                ("sigmoid", vec![x.clone()], Box::new(|t, v| t.sigmoid(v[0]))),
                ("tanh", vec![x.clone()], Box::new(|t, v| t.tanh(v[0]))),
                ("exp", vec![x.clone()], Box::new(|t, v| t.exp(v[0]))),
                ("log", vec![pos.clone()], Box::new(|t, v| t.log(v[0]).unwrap())),
                ("concat", vec![x.clone(), y.clone()], Box::new(|t, v| {
                    let c = t.concat(v[0], v[1]).unwrap();
                    t.narrow(c, 2, 4).unwrap()
                })),
                ("softmax", vec![x.clone()], Box::new(|t, v| t.softmax(v[0]).unwrap())),
                ("log_softmax", vec![x.clone()], Box::new(|t, v| t.log_softmax(v[0]).unwrap())),
                ("add_bias", vec![x.clone(), bias.clone()], Box::new(|t, v| t.add_bias(v[0], v[1]).unwrap())),
                ("narrow", vec![x.clone()], Box::new(|t, v| t.narrow(v[0], 1, 2).unwrap())),
                ("row_scale", vec![x.clone(), s.clone()], Box::new(|t, v| t.row_scale(v[0], v[1]).unwrap())),
                ("select_rows", vec![x.clone(), y.clone()], Box::new(|t, v| {
                    t.select_rows(&[v[0], v[1]], &[1, 0, 1]).unwrap()
                })),
                ("mean", vec![x.clone()], Box::new(|t, v| t.mean(v[0]))),
            ];
            for (name, inputs, op) in cases {
                let w = w.clone();
                let err = fd_check(&inputs, |t, v| {
                    let out = op(t, v);
                    // random projection so every output entry matters differently
                    let shape = t.value(out).shape.clone();
                    let proj = Tensor::new(shape.clone(), w.data[..shape.iter().product()].to_vec()).unwrap();
                    let p = t.constant(proj);
                    let prod = t.mul(out, p).unwrap();
                    t.sum(prod)
                });
                assert!(err < 1e-4, "{name}: {err}");
            }
            let err = fd_check(std::slice::from_ref(&x), |t, v| {
                let g = t.gather(v[0], &[3, 0, 2]).unwrap();
                let sq = t.mul(g, g).unwrap();
                t.sum(sq)
            });
            assert!(err < 1e-4, "gather: {err}");
        }
    }

    #[test]
    fn log_rejects_non_positive_and_names_index() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0, 0.0, -1.0]));
        match t.log(x) {
            Err(Error::Domain { op: "log", index: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn concat_examples_and_routing() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = t.leaf(Tensor::vector(vec![3.0]));
        let c = t.concat(a, b).unwrap();
        assert_eq!(t.value(c).data, vec![1.0, 2.0, 3.0]);
        let s = t.sum(c);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap().data, vec![1.0, 1.0]);
        assert_eq!(t.grad(b).unwrap().data, vec![1.0]);

        let empty = t.constant(Tensor::vector(vec![]));
        let five = t.constant(Tensor::vector(vec![5.0]));
        let c = t.concat(empty, five).unwrap();
        assert_eq!(t.value(c).data, vec![5.0]);

        let m = t.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(t.concat(a, m), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let p = t.softmax(x).unwrap();
        for v in &t.value(p).data {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = t.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let p = t.softmax(x).unwrap();
        assert_eq!(t.value(p).data, vec![0.5, 0.5]);
        let lp = t.log_softmax(x).unwrap();
        assert!((t.value(lp).data[0] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_of_selected_softmax_entry_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[5], -2.0, 2.0);
        let err = fd_check(std::slice::from_ref(&x), |t, v| {
            let p = t.softmax(v[0]).unwrap();
            let l = t.log(p).unwrap();
            t.gather(l, &[2]).unwrap()
        });
        assert!(err < 1e-6, "{err}");
        let err = fd_check(&[x], |t, v| {
            let l = t.log_softmax(v[0]).unwrap();
            t.gather(l, &[2]).unwrap()
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detach_stops_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![2.0, -3.0]));
        let y = t.leaf(Tensor::vector(vec![5.0, 7.0]));
        let dx = t.detach(x);
        assert!(!t.requires_grad(dx));
        let p = t.mul(dx, y).unwrap();
        let s = t.sum(p);
        t.backward(s).unwrap();
        assert!(t.grad(x).is_none());
        assert_eq!(t.grad(y).unwrap().data, vec![2.0, -3.0]);
    }

    #[test]
    fn backward_of_sum_is_ones_and_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.5, -1.0, 4.0]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data, vec![1.0; 3]);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data, vec![2.0; 3]);
        t.zero_grads();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn reused_node_accumulates_both_paths() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -2.0]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data, vec![3.0, -4.0]);
    }

    #[test]
    fn non_scalar_root_is_a_contract_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, &[4, 6], -2.0, 2.0);
        let w = random(&mut rng, &[5, 6], -2.0, 2.0);
        let run = || {
            let mut t = Tape::new();
            let av = t.leaf(a.clone());
            let wv = t.leaf(w.clone());
            let m = t.matmul_nt(av, wv).unwrap();
            let h = t.tanh(m);
            let p = t.log_softmax(h).unwrap();
            let s = t.mean(p);
            t.backward(s).unwrap();
            (t.grad(av).unwrap().clone(), t.grad(wv).unwrap().clone())
        };
        let (g1, w1) = run();
        let (g2, w2) = run();
        assert!(g1.data.iter().zip(&g2.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(w1.data.iter().zip(&w2.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn injected_sigmoid_fault_breaks_gradient() {
        let x = Tensor::vector(vec![0.3, -0.8]);
        let mut t = Tape::new();
        t.inject_fault(Fault::SigmoidBackward);
        let v = t.leaf(x);
        let s = t.sigmoid(v);
        let total = t.sum(s);
        t.backward(total).unwrap();
        let g = t.grad(v).unwrap().data[0];
        let true_grad = sigmoid(0.3) * (1.0 - sigmoid(0.3));
        assert!((g - true_grad).abs() > 1e-2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn softmax_is_a_distribution(xs in prop::collection::vec(-15.0f64..15.0, 1..12)) {
                let mut t = Tape::new();
                let x = t.constant(Tensor::vector(xs));
                let p = t.softmax(x).unwrap();
                let p = &t.value(p).data;
                let total: f64 = p.iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(p.iter().all(|v| *v > 0.0 && (*v < 1.0 || p.len() == 1)));
            }
        }
    }
}
