//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node whose inputs already live on the tape, so
//! node order is a topological order and the backward pass is a single reverse
//! sweep.

use super::tensor::{gemm, log_sigmoid, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    BagMean {
        table: Var,
        offsets: Vec<usize>,
        indices: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of primitive operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if any flowed into it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::shape(op, format!("{a:?} vs {b:?}"))
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
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

    fn shape(&self, var: Var) -> [usize; 2] {
        self.nodes[var.0].value.shape()
    }

    /// A trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `var` cut off from the gradient flow.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(sa[0], sb[1]);
        gemm(
            sa[0],
            sa[1],
            sb[1],
            1.0,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            out.data_mut(),
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa[0], sa[1], data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `a + row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr[0] != 1 || sr[1] != sa[1] {
            return Err(mismatch("add_row", sa, sr));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in out.data_mut().chunks_mut(sa[1].max(1)) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::AddConst(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(log_sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::LogSigmoid(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.shape(first)[0];
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p)[0] != rows) {
            return Err(mismatch("concat_cols", self.shape(first), self.shape(bad)));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let cols = self.shape(first)[1];
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p)[1] != cols) {
            return Err(mismatch("concat_rows", self.shape(first), self.shape(bad)));
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start > end || end > s[1] {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {s:?}")));
        }
        let mut data = Vec::with_capacity(s[0] * (end - start));
        for r in 0..s[0] {
            data.extend_from_slice(&self.value(a).row_slice(r)[start..end]);
        }
        let out = Tensor::new(s[0], end - start, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start > end || end > s[0] {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {s:?}")));
        }
        let data = self.value(a).data()[start * s[1]..end * s[1]].to_vec();
        let out = Tensor::new(end - start, s[1], data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    /// Embedding lookup: output row `i` is row `indices[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {s:?}")));
        }
        let mut data = Vec::with_capacity(indices.len() * s[1]);
        for &i in indices {
            data.extend_from_slice(self.value(table).row_slice(i));
        }
        let out = Tensor::new(indices.len(), s[1], data)?;
        let rg = self.any_grad(&[table]);
        Ok(self.push(out, Op::GatherRows(table, indices.to_vec()), rg))
    }

    /// Output row `i` is the mean of the table rows listed in `bags[i]`.
    pub fn bag_mean<B: AsRef<[usize]>>(&mut self, table: Var, bags: &[B]) -> Result<Var> {
        let s = self.shape(table);
        let mut offsets = Vec::with_capacity(bags.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for bag in bags {
            let bag = bag.as_ref();
            if bag.is_empty() {
                return Err(Error::shape("bag_mean", "empty bag"));
            }
            if let Some(&bad) = bag.iter().find(|&&i| i >= s[0]) {
                return Err(Error::shape("bag_mean", format!("row {bad} of {s:?}")));
            }
            indices.extend_from_slice(bag);
            offsets.push(indices.len());
        }
        let mut out = Tensor::zeros(bags.len(), s[1]);
        {
            let t = self.value(table);
            let cols = s[1];
            let o = out.data_mut();
            for (b, w) in offsets.windows(2).enumerate() {
                let inv = 1.0 / (w[1] - w[0]) as f64;
                let dst = &mut o[b * cols..(b + 1) * cols];
                for &i in &indices[w[0]..w[1]] {
                    for (d, x) in dst.iter_mut().zip(t.row_slice(i)) {
                        *d += x * inv;
                    }
                }
            }
        }
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            out,
            Op::BagMean {
                table,
                offsets,
                indices,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let total: f64 = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(total / n as f64), Op::Mean(a), rg))
    }

    /// Gradients of the scalar `loss` with respect to every node that requires them.
    ///
    /// The tape is left intact, so several losses recorded on one tape can be
    /// differentiated independently.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let s = self.shape(loss);
        if s != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {s:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, delta: Tensor| {
            let slot = &mut grads[v.0];
            match slot {
                Some(t) => t.add_assign(&delta),
                None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if wants(*a) {
                    let mut da = Tensor::zeros(m, k);
                    gemm(m, n, k, 1.0, g.data(), false, vb.data(), true, da.data_mut());
                    acc(*a, da);
                }
                if wants(*b) {
                    let mut db = Tensor::zeros(k, n);
                    gemm(k, m, n, 1.0, va.data(), true, g.data(), false, db.data_mut());
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*b) {
                    acc(*b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(*a) {
                    acc(*a, elementwise(g, vb, |x, y| x * y));
                }
                if wants(*b) {
                    acc(*b, elementwise(g, va, |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                if wants(*row) {
                    let cols = g.cols();
                    let mut dr = vec![0.0; cols];
                    for chunk in g.data().chunks(cols.max(1)) {
                        for (d, x) in dr.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    acc(*row, Tensor::row(dr));
                }
            }
            Op::Scale(a, f) => {
                if wants(*a) {
                    acc(*a, g.map(|x| x * f));
                }
            }
            Op::AddConst(a) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    acc(*a, elementwise(g, &node.value, |x, y| x * (1.0 - y * y)));
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    acc(*a, elementwise(g, &node.value, |x, y| x * y * (1.0 - y)));
                }
            }
            Op::LogSigmoid(a) => {
                if wants(*a) {
                    acc(*a, elementwise(g, &nodes[a.0].value, |x, y| x * sigmoid(-y)));
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut start = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    if wants(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[start..start + w]);
                        }
                        acc(p, Tensor::new(rows, w, data).expect("concat_cols grad shape"));
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut start = 0;
                for &p in parts {
                    let h = nodes[p.0].value.rows();
                    if wants(p) {
                        let data = g.data()[start * cols..(start + h) * cols].to_vec();
                        acc(p, Tensor::new(h, cols, data).expect("concat_rows grad shape"));
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                if wants(*a) {
                    let src = &nodes[a.0].value;
                    let mut da = Tensor::zeros(src.rows(), src.cols());
                    let (w, cols) = (g.cols(), src.cols());
                    let d = da.data_mut();
                    for r in 0..g.rows() {
                        d[r * cols + start..r * cols + start + w].copy_from_slice(g.row_slice(r));
                    }
                    acc(*a, da);
                }
            }
            Op::SliceRows(a, start) => {
                if wants(*a) {
                    let src = &nodes[a.0].value;
                    let mut da = Tensor::zeros(src.rows(), src.cols());
                    let cols = src.cols();
                    da.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    acc(*a, da);
                }
            }
            Op::GatherRows(table, indices) => {
                if wants(*table) {
                    let src = &nodes[table.0].value;
                    let cols = src.cols();
                    let mut dt = Tensor::zeros(src.rows(), cols);
                    let d = dt.data_mut();
                    for (r, &i) in indices.iter().enumerate() {
                        for (x, y) in d[i * cols..(i + 1) * cols].iter_mut().zip(g.row_slice(r)) {
                            *x += y;
                        }
                    }
                    acc(*table, dt);
                }
            }
            Op::BagMean {
                table,
                offsets,
                indices,
            } => {
                if wants(*table) {
                    let src = &nodes[table.0].value;
                    let cols = src.cols();
                    let mut dt = Tensor::zeros(src.rows(), cols);
                    let d = dt.data_mut();
                    for (b, w) in offsets.windows(2).enumerate() {
                        let inv = 1.0 / (w[1] - w[0]) as f64;
                        for &i in &indices[w[0]..w[1]] {
                            for (x, y) in d[i * cols..(i + 1) * cols].iter_mut().zip(g.row_slice(b)) {
                                *x += y * inv;
                            }
                        }
                    }
                    acc(*table, dt);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let s = nodes[a.0].value.shape();
                    acc(*a, Tensor::full(s[0], s[1], g.data()[0]));
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let src = &nodes[a.0].value;
                    let s = src.shape();
                    acc(*a, Tensor::full(s[0], s[1], g.data()[0] / src.len() as f64));
                }
            }
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}
