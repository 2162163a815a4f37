//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node whose inputs have strictly smaller indices, so the
//! tape order is already a topological order and `backward` is a single
//! reverse sweep. Parameters are read from the borrowed [`ParamStore`]
//! without copying; their gradients come back as [`Gradients`] and are
//! folded into the store by the caller.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::params::{Gradients, ParamId, ParamStore};
use crate::numerics::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, order_free_sum, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Edge list `(source, target)` over `nodes` nodes, shared between tapes.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    pub nodes: usize,
    pub edges: Rc<[(usize, usize)]>,
}

impl EdgeList {
    pub fn new(nodes: usize, edges: Vec<(usize, usize)>) -> Self {
        EdgeList {
            nodes,
            edges: edges.into(),
        }
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes];
        for &(_, t) in self.edges.iter() {
            deg[t] += 1;
        }
        deg
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    DivScalar(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var, Axis),
    Concat(Vec<Var>, Axis),
    GatherRows(Var, Vec<usize>),
    SparseAdj {
        graph: EdgeList,
        h: Var,
        inv_degree: Option<Vec<f64>>,
    },
    MeanRows(Var),
    ConvStack {
        weights: Var,
        rows: Vec<usize>,
        graphs: Vec<Var>,
        bias: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SliceCols(Var, usize),
    Sum(Var),
    AddN(Vec<Var>),
    Attend(Var, Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
    }
    let mut scratch = xs.to_vec();
    let total = order_free_sum(&mut scratch);
    for x in xs.iter_mut() {
        *x /= total;
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).rank2(op)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &[m, k], &[k2, n]));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul_nt")?;
        let (n, k2) = self.dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", &[m, k], &[n, k2]));
        }
        let out = matmul_nt_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulNT(a, b)))
    }

    /// Elementwise sum of equal shapes, or `[m, n] + [1, n]` bias broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "add")?;
        let (bm, bn) = self.dims(b, "add")?;
        if bn != n || (bm != m && bm != 1) {
            return Err(Error::shape("add", &[m, n], &[bm, bn]));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if bm == m {
            let out = av.iter().zip(bv).map(|(x, y)| x + y).collect();
            Ok(self.push(Tensor::matrix(m, n, out), Op::Add(a, b)))
        } else {
            let out = av
                .chunks(n)
                .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
                .collect();
            Ok(self.push(Tensor::matrix(m, n, out), Op::AddRow(a, b)))
        }
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "mul")?;
        let (bm, bn) = self.dims(b, "mul")?;
        if (m, n) != (bm, bn) {
            return Err(Error::shape("mul", &[m, n], &[bm, bn]));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Tensor::matrix(m, n, out), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Division by a constant. Kept separate from `scale` because `x / m`
    /// and `x * (1 / m)` round differently.
    pub fn div_scalar(&mut self, a: Var, divisor: f64) -> Var {
        let out = self.value(a).map(|x| x / divisor);
        self.push(out, Op::DivScalar(a, divisor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (m, n) = self.dims(a, "softmax")?;
        let mut out = self.value(a).clone();
        match axis {
            Axis::Cols => {
                for row in out.data_mut().chunks_mut(n) {
                    softmax_in_place(row);
                }
            }
            Axis::Rows => {
                for c in 0..n {
                    let mut col: Vec<f64> = (0..m).map(|r| out.get(r, c)).collect();
                    softmax_in_place(&mut col);
                    for (r, v) in col.into_iter().enumerate() {
                        out.set(r, c, v);
                    }
                }
            }
        }
        Ok(self.push(out, Op::Softmax(a, axis)))
    }

    /// Concatenation along `axis`: `Rows` stacks vertically, `Cols` places
    /// blocks side by side.
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let (m0, n0) = self.dims(first, "concat")?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (m, n) = self.dims(p, "concat")?;
            let ok = match axis {
                Axis::Rows => n == n0,
                Axis::Cols => m == m0,
            };
            if !ok {
                return Err(Error::shape("concat", &[m0, n0], &[m, n]));
            }
            dims.push((m, n));
        }
        let out = match axis {
            Axis::Rows => {
                let rows: usize = dims.iter().map(|d| d.0).sum();
                let data = parts
                    .iter()
                    .flat_map(|&p| self.value(p).data().iter().copied())
                    .collect();
                Tensor::matrix(rows, n0, data)
            }
            Axis::Cols => {
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(m0 * cols);
                for r in 0..m0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::matrix(m0, cols, data)
            }
        };
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(table, "gather_rows")?;
        if indices.is_empty() {
            return Err(Error::InvalidArgument("gather_rows with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::UnknownToken { index: bad, size: m });
        }
        let t = self.value(table);
        let data = indices
            .iter()
            .flat_map(|&i| t.row_slice(i).iter().copied())
            .collect();
        Ok(self.push(
            Tensor::matrix(indices.len(), n, data),
            Op::GatherRows(table, indices.to_vec()),
        ))
    }

    /// Row `j` of the result is the sum of rows `i` of `h` over edges
    /// `(i, j)`, taken in edge-list order. With `mean` set, each row is
    /// divided by its in-degree.
    pub fn sparse_adj_matmul(&mut self, graph: &EdgeList, h: Var, mean: bool) -> Result<Var> {
        let (m, n) = self.dims(h, "sparse_adj_matmul")?;
        if m != graph.nodes {
            return Err(Error::shape("sparse_adj_matmul", &[graph.nodes], &[m, n]));
        }
        let hv = self.value(h);
        let mut out = Tensor::zeros(m, n);
        for &(s, t) in graph.edges.iter() {
            let src = hv.row_slice(s);
            let dst = &mut out.data_mut()[t * n..(t + 1) * n];
            for (d, x) in dst.iter_mut().zip(src) {
                *d += x;
            }
        }
        let inv_degree = mean.then(|| {
            graph
                .in_degrees()
                .into_iter()
                .map(|d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
                .collect::<Vec<_>>()
        });
        if let Some(inv) = &inv_degree {
            for (row, &w) in out.data_mut().chunks_mut(n).zip(inv) {
                row.iter_mut().for_each(|x| *x *= w);
            }
        }
        Ok(self.push(
            out,
            Op::SparseAdj {
                graph: graph.clone(),
                h,
                inv_degree,
            },
        ))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "mean_rows")?;
        let v = self.value(a);
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, x) in out.iter_mut().zip(v.row_slice(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|x| *x /= m as f64);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a)))
    }

    /// Learned per-channel linear combination across stacked graph
    /// representations: `out[n, c] = Σ_g weights[rows[g], c] · graphs[g][n, c] + bias[c]`.
    pub fn conv_stack(&mut self, weights: Var, rows: &[usize], graphs: &[Var], bias: Var) -> Result<Var> {
        if graphs.is_empty() || graphs.len() != rows.len() {
            return Err(Error::InvalidArgument(
                "conv_stack needs one weight row per graph".into(),
            ));
        }
        let (wr, wc) = self.dims(weights, "conv_stack")?;
        let (n, d) = self.dims(graphs[0], "conv_stack")?;
        let (br, bc) = self.dims(bias, "conv_stack")?;
        if wc != d || br != 1 || bc != d {
            return Err(Error::shape("conv_stack", &[wr, wc], &[n, d]));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= wr) {
            return Err(Error::shape("conv_stack", &[wr, wc], &[bad]));
        }
        for &g in graphs {
            let dims = self.dims(g, "conv_stack")?;
            if dims != (n, d) {
                return Err(Error::shape("conv_stack", &[n, d], &[dims.0, dims.1]));
            }
        }
        let w = self.value(weights);
        let mut out = vec![0.0; n * d];
        for (gi, (&g, &row)) in graphs.iter().zip(rows).enumerate() {
            let h = self.value(g).data();
            let wrow = w.row_slice(row);
            for (idx, o) in out.iter_mut().enumerate() {
                let term = wrow[idx % d] * h[idx];
                if gi == 0 {
                    *o = term;
                } else {
                    *o += term;
                }
            }
        }
        let b = self.value(bias).data();
        for (idx, o) in out.iter_mut().enumerate() {
            *o += b[idx % d];
        }
        Ok(self.push(
            Tensor::matrix(n, d, out),
            Op::ConvStack {
                weights,
                rows: rows.to_vec(),
                graphs: graphs.to_vec(),
                bias,
            },
        ))
    }

    /// Sum over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logits, "cross_entropy")?;
        if targets.len() != m {
            return Err(Error::shape("cross_entropy", &[m, n], &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::UnknownToken { index: bad, size: n });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_mut(n).zip(targets) {
            softmax_in_place(row);
            loss -= row[t].ln();
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, len]));
        }
        let v = self.value(a);
        let data = (0..m)
            .flat_map(|r| v.row_slice(r)[start..start + len].iter().copied())
            .collect();
        Ok(self.push(Tensor::matrix(m, len, data), Op::SliceCols(a, start)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Left-to-right elementwise sum of equally shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("add_n of zero tensors".into()))?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            let v = self.value(p);
            if v.shape() != out.shape() {
                return Err(Error::shape("add_n", out.shape(), v.shape()));
            }
            out.add_assign(v);
        }
        Ok(self.push(out, Op::AddN(parts.to_vec())))
    }

    /// `weights [r, n] · values [n, k]` with each output entry reduced by
    /// [`order_free_sum`], so permuting the `n` axis of both operands leaves
    /// the result bitwise unchanged.
    pub fn attend(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (r, n) = self.dims(weights, "attend")?;
        let (n2, k) = self.dims(values, "attend")?;
        if n != n2 {
            return Err(Error::shape("attend", &[r, n], &[n2, k]));
        }
        let w = self.value(weights);
        let v = self.value(values);
        let mut out = Vec::with_capacity(r * k);
        let mut terms = vec![0.0; n];
        for i in 0..r {
            for c in 0..k {
                for (j, t) in terms.iter_mut().enumerate() {
                    *t = w.get(i, j) * v.get(j, c);
                }
                out.push(order_free_sum(&mut terms));
            }
        }
        Ok(self.push(Tensor::matrix(r, k, out), Op::Attend(weights, values)))
    }

    /// Reverse sweep from a scalar `loss`; returns the gradient of every
    /// parameter reached.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut param_grads: Vec<(ParamId, Tensor)> = Vec::new();

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = || node.value.as_ref().expect("op nodes own values");
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => param_grads.push((*id, g)),
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a, "matmul")?;
                    let n = g.cols();
                    let da = matmul_nt_raw(g.data(), self.value(*b).data(), m, n, k);
                    let db = matmul_tn_raw(self.value(*a).data(), g.data(), m, k, n);
                    acc(&mut grads, *a, Tensor::matrix(m, k, da));
                    acc(&mut grads, *b, Tensor::matrix(k, n, db));
                }
                Op::MatMulNT(a, b) => {
                    // c = a bᵀ: da = g b, db = gᵀ a
                    let (m, k) = self.dims(*a, "matmul_nt")?;
                    let n = g.cols();
                    let da = matmul_raw(g.data(), self.value(*b).data(), m, n, k);
                    let db = matmul_tn_raw(g.data(), self.value(*a).data(), m, n, k);
                    acc(&mut grads, *a, Tensor::matrix(m, k, da));
                    acc(&mut grads, *b, Tensor::matrix(n, k, db));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    acc(&mut grads, *b, Tensor::row(db));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let da = Tensor::matrix(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect(),
                    );
                    let db = Tensor::matrix(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect(),
                    );
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g.map(|x| x * f)),
                Op::DivScalar(a, f) => acc(&mut grads, *a, g.map(|x| x / f)),
                Op::Relu(a) => {
                    let y = out();
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gx, yx)| if *yx > 0.0 { *gx } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, Tensor::matrix(g.rows(), g.cols(), d));
                }
                Op::Tanh(a) => {
                    let y = out();
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gx, yx)| gx * (1.0 - yx * yx))
                        .collect();
                    acc(&mut grads, *a, Tensor::matrix(g.rows(), g.cols(), d));
                }
                Op::Sigmoid(a) => {
                    let y = out();
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gx, yx)| gx * yx * (1.0 - yx))
                        .collect();
                    acc(&mut grads, *a, Tensor::matrix(g.rows(), g.cols(), d));
                }
                Op::Softmax(a, axis) => {
                    let y = out();
                    let (m, n) = (y.rows(), y.cols());
                    let mut d = Tensor::zeros(m, n);
                    match axis {
                        Axis::Cols => {
                            for r in 0..m {
                                let dot: f64 = (0..n).map(|c| g.get(r, c) * y.get(r, c)).sum();
                                for c in 0..n {
                                    d.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                                }
                            }
                        }
                        Axis::Rows => {
                            for c in 0..n {
                                let dot: f64 = (0..m).map(|r| g.get(r, c) * y.get(r, c)).sum();
                                for r in 0..m {
                                    d.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                                }
                            }
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Concat(parts, axis) => match axis {
                    Axis::Rows => {
                        let n = g.cols();
                        let mut offset = 0;
                        for &p in parts {
                            let rows = self.value(p).rows();
                            let data = g.data()[offset * n..(offset + rows) * n].to_vec();
                            acc(&mut grads, p, Tensor::matrix(rows, n, data));
                            offset += rows;
                        }
                    }
                    Axis::Cols => {
                        let m = g.rows();
                        let mut offset = 0;
                        for &p in parts {
                            let cols = self.value(p).cols();
                            let data = (0..m)
                                .flat_map(|r| g.row_slice(r)[offset..offset + cols].iter().copied())
                                .collect();
                            acc(&mut grads, p, Tensor::matrix(m, cols, data));
                            offset += cols;
                        }
                    }
                },
                Op::GatherRows(table, indices) => {
                    let t = self.value(*table);
                    let n = t.cols();
                    let mut d = Tensor::zeros(t.rows(), n);
                    for (r, &i) in indices.iter().enumerate() {
                        let dst = &mut d.data_mut()[i * n..(i + 1) * n];
                        for (x, y) in dst.iter_mut().zip(g.row_slice(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *table, d);
                }
                Op::SparseAdj {
                    graph,
                    h,
                    inv_degree,
                } => {
                    let n = g.cols();
                    let mut d = Tensor::zeros(graph.nodes, n);
                    for &(s, t) in graph.edges.iter() {
                        let w = inv_degree.as_ref().map_or(1.0, |inv| inv[t]);
                        let src = g.row_slice(t).to_vec();
                        let dst = &mut d.data_mut()[s * n..(s + 1) * n];
                        for (x, y) in dst.iter_mut().zip(src) {
                            *x += w * y;
                        }
                    }
                    acc(&mut grads, *h, d);
                }
                Op::MeanRows(a) => {
                    let m = self.value(*a).rows();
                    let row: Vec<f64> = g.data().iter().map(|x| x / m as f64).collect();
                    let data = (0..m).flat_map(|_| row.iter().copied()).collect();
                    acc(&mut grads, *a, Tensor::matrix(m, row.len(), data));
                }
                Op::ConvStack {
                    weights,
                    rows,
                    graphs,
                    bias,
                } => {
                    let w = self.value(*weights);
                    let d = w.cols();
                    let mut dw = Tensor::zeros(w.rows(), d);
                    for (&gv, &row) in graphs.iter().zip(rows) {
                        let h = self.value(gv);
                        let wrow = w.row_slice(row);
                        let mut dh = Vec::with_capacity(h.len());
                        for (idx, (gx, hx)) in g.data().iter().zip(h.data()).enumerate() {
                            let c = idx % d;
                            let cur = dw.get(row, c);
                            dw.set(row, c, cur + gx * hx);
                            dh.push(gx * wrow[c]);
                        }
                        acc(&mut grads, gv, Tensor::matrix(h.rows(), d, dh));
                    }
                    let mut db = vec![0.0; d];
                    for row in g.data().chunks(d) {
                        for (x, y) in db.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *weights, dw);
                    acc(&mut grads, *bias, Tensor::row(db));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.data()[0];
                    let n = self.value(*logits).cols();
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * n + t] -= scale;
                    }
                    acc(&mut grads, *logits, Tensor::matrix(targets.len(), n, d));
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let (m, n) = (src.rows(), src.cols());
                    let len = g.cols();
                    let mut d = Tensor::zeros(m, n);
                    for r in 0..m {
                        d.data_mut()[r * n + start..r * n + start + len]
                            .copy_from_slice(g.row_slice(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let src = self.value(*a);
                    acc(&mut grads, *a, src.map(|_| g.data()[0]));
                }
                Op::AddN(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, g.clone());
                    }
                }
                Op::Attend(weights, values) => {
                    let w = self.value(*weights);
                    let v = self.value(*values);
                    let (r, n) = (w.rows(), w.cols());
                    let k = v.cols();
                    let dw = matmul_nt_raw(g.data(), v.data(), r, k, n);
                    let dv = matmul_tn_raw(w.data(), g.data(), r, n, k);
                    acc(&mut grads, *weights, Tensor::matrix(r, n, dw));
                    acc(&mut grads, *values, Tensor::matrix(n, k, dv));
                }
            }
        }

        // several tape nodes may refer to the same parameter
        param_grads.sort_by_key(|(id, _)| *id);
        let mut entries: Vec<(ParamId, Tensor)> = Vec::new();
        for (id, g) in param_grads {
            match entries.last_mut() {
                Some((last, existing)) if *last == id => existing.add_assign(&g),
                _ => entries.push((id, g)),
            }
        }
        Ok(Gradients { entries })
    }
}
