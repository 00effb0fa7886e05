//! Reverse-mode differentiation over a tape of matrix operations.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so the node index is a topological order
//! and [`Graph::backward`] is a single reverse sweep. Parameters enter the
//! tape as leaves that remember their [`ParamId`]; after the sweep only the
//! leaves of the requested groups write into the [`ParamStore`].

use std::collections::{HashMap, HashSet};

use crate::error::{Result, SarlError};
use crate::numerics::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use crate::numerics::{GroupName, ParamId, ParamStore, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Log { x: Var, floor: f64 },
    SoftmaxRows(Var),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Transpose(Var),
    Element(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SpanPool {
        h: Var,
        scores: Var,
        spans: Vec<(usize, usize)>,
        weights: Vec<Vec<f64>>,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRow(a, b)
            | Op::Mul(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::Affine(a, _)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::SumAll(a)
            | Op::GatherRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Transpose(a)
            | Op::Element(a, _) => vec![*a],
            Op::Log { x, .. } => vec![*x],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::SpanPool { h, scores, .. } => vec![*h, *scores],
        }
    }
}

/// One recorded value together with the operation that produced it.
#[derive(Debug, Clone)]
pub struct TensorNode {
    pub value: Tensor,
    /// Filled by [`Graph::backward`] for nodes on a path to a requested group.
    pub grad: Option<Vec<f64>>,
    op: Op,
}

impl TensorNode {
    pub fn parents(&self) -> Vec<Var> {
        self.op.parents()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_slice(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<TensorNode>,
    param_leaves: HashMap<ParamId, Var>,
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

    pub fn node(&self, v: Var) -> &TensorNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(TensorNode {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> Vec<usize> {
        let (r, c) = self.shape(v);
        vec![r, c]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a stored parameter. Repeated requests reuse one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(SarlError::shape("matmul", &self.dims(a), &self.dims(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_parts_unchecked(m, n, out), Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(SarlError::shape(op_name, &self.dims(a), &self.dims(b)));
        }
        let (m, n) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts_unchecked(m, n, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    fn row_broadcast(&mut self, op_name: &'static str, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(SarlError::shape(op_name, &self.dims(a), &self.dims(row)));
        }
        let r = self.value(row).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
            .collect();
        Ok(Tensor::from_parts_unchecked(m, n, data))
    }

    /// `a[m x n] + row[1 x n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        Ok(self.push(t, Op::AddRow(a, row)))
    }

    /// `a[m x n] * row[1 x n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        Ok(self.push(t, Op::MulRow(a, row)))
    }

    /// `a[m x n] * col[m x 1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(col) != (m, 1) {
            return Err(SarlError::shape("mul_col", &self.dims(a), &self.dims(col)));
        }
        let c = self.value(col).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .zip(c)
            .flat_map(|(chunk, &s)| chunk.iter().map(move |&x| x * s))
            .collect();
        Ok(self.push(Tensor::from_parts_unchecked(m, n, data), Op::MulCol(a, col)))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (m, n) = self.shape(a);
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(Tensor::from_parts_unchecked(m, n, data), op)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.map(a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, |x| x.max(floor).ln(), Op::Log { x: a, floor })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let data: Vec<f64> = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(softmax_slice)
            .collect();
        self.push(Tensor::from_parts_unchecked(m, n, data), Op::SoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Sum of scalar nodes; `None` when `terms` is empty.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Result<Option<Var>> {
        match terms.len() {
            0 => Ok(None),
            1 => Ok(Some(terms[0])),
            _ => {
                let stacked = self.concat_rows(terms)?;
                Ok(Some(self.sum(stacked)))
            }
        }
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(SarlError::Contract("concat_cols of nothing".into()));
        };
        let m = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != m {
                return Err(SarlError::shape("concat_cols", &self.dims(first), &self.dims(p)));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_parts_unchecked(m, n, data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(SarlError::Contract("concat_rows of nothing".into()));
        };
        let n = self.shape(first).1;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            if self.shape(p).1 != n {
                return Err(SarlError::shape("concat_rows", &self.dims(first), &self.dims(p)));
            }
            m += self.shape(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::from_parts_unchecked(m, n, data), Op::ConcatRows(parts.to_vec())))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(a);
        if indices.is_empty() {
            return Err(SarlError::Contract("gather_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(SarlError::IndexOutOfRange { index: i, len: m });
            }
            data.extend_from_slice(&self.value(a).data()[i * n..(i + 1) * n]);
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(indices.len(), n, data),
            Op::GatherRows(a, indices.to_vec()),
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_rows(a, &idx)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if width == 0 || start + width > n {
            return Err(SarlError::shape("slice_cols", &[m, n], &[start, width]));
        }
        let src = self.value(a).data();
        let data = (0..m)
            .flat_map(|i| src[i * n + start..i * n + start + width].iter().copied())
            .collect();
        Ok(self.push(Tensor::from_parts_unchecked(m, width, data), Op::SliceCols(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a))
    }

    /// Single element (row-major flat index) as a `1 x 1` node.
    pub fn element(&mut self, a: Var, flat: usize) -> Result<Var> {
        let len = self.value(a).len();
        if flat >= len {
            return Err(SarlError::IndexOutOfRange { index: flat, len });
        }
        let v = self.value(a).data()[flat];
        Ok(self.push(Tensor::scalar(v), Op::Element(a, flat)))
    }

    /// Row-wise layer normalization with learned `gamma`/`beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.shape(x);
        if self.shape(gamma) != (1, n) || self.shape(beta) != (1, n) {
            return Err(SarlError::shape("layer_norm", &self.dims(x), &self.dims(gamma)));
        }
        let xs = self.value(x).data();
        let gs = self.value(gamma).data();
        let bs = self.value(beta).data();
        let mut normalized = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in xs.chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * is;
                normalized.push(xh);
                out.push(xh * gs[j] + bs[j]);
            }
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(m, n, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    /// Attention pooling of many spans at once.
    ///
    /// `h` is `n x d` (one row per token), `scores` is `n x 1`. For every
    /// inclusive span `(s, e)` the output row is
    /// `sum_i softmax(scores[s..=e])_i * h[i]`.
    pub fn span_pool(&mut self, h: Var, scores: Var, spans: &[(usize, usize)]) -> Result<Var> {
        let (n, d) = self.shape(h);
        if self.shape(scores) != (n, 1) {
            return Err(SarlError::shape("span_pool", &self.dims(h), &self.dims(scores)));
        }
        if spans.is_empty() {
            return Err(SarlError::Contract("span_pool with no spans".into()));
        }
        let hs = self.value(h).data();
        let sc = self.value(scores).data();
        let mut weights = Vec::with_capacity(spans.len());
        let mut out = vec![0.0; spans.len() * d];
        for (k, &(s, e)) in spans.iter().enumerate() {
            if s > e || e >= n {
                return Err(SarlError::Contract(format!("span ({s},{e}) invalid for length {n}")));
            }
            let w = softmax_slice(&sc[s..=e]);
            let row = &mut out[k * d..(k + 1) * d];
            for (i, &wi) in w.iter().enumerate() {
                let hrow = &hs[(s + i) * d..(s + i + 1) * d];
                for (o, &hv) in row.iter_mut().zip(hrow) {
                    *o += wi * hv;
                }
            }
            weights.push(w);
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(spans.len(), d, out),
            Op::SpanPool {
                h,
                scores,
                spans: spans.to_vec(),
                weights,
            },
        ))
    }

    /// Back-propagates from the scalar `loss` and accumulates gradients into
    /// `store`, but only for parameters of the requested `groups`.
    ///
    /// Parameters of other groups are never written, even when they lie on
    /// the path to `loss`. Intermediate node gradients are kept only for
    /// nodes that lead to a requested parameter.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore, groups: &[GroupName]) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(SarlError::shape("backward", &self.dims(loss), &[1]));
        }
        let wanted: HashSet<GroupName> = groups.iter().copied().collect();
        let upto = loss.0 + 1;
        let mut needed = vec![false; upto];
        for i in 0..upto {
            needed[i] = match &self.nodes[i].op {
                Op::Param(id) => wanted.contains(&id.group),
                op => op.parents().iter().any(|p| needed[p.0]),
            };
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !needed[loss.0] {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; upto];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..upto).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &needed, &mut grads);
            if let Op::Param(id) = self.nodes[i].op {
                store.accumulate_grad(id, &g)?;
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], needed: &[bool], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let dims = |v: Var| nodes[v.0].value.dims2();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !needed[v.0] {
                return;
            }
            let len = nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(*a);
                let n = dims(*b).1;
                acc(*a, &mut |ga| matmul_a_bt_acc(g, val(*b), ga, m, k, n));
                acc(*b, &mut |gb| matmul_at_b_acc(val(*a), g, gb, m, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::AddRow(a, row) => {
                let n = dims(*a).1;
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*row, &mut |gr| {
                    for chunk in g.chunks(n) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::MulRow(a, row) => {
                let n = dims(*a).1;
                let (av, rv) = (val(*a), val(*row));
                acc(*a, &mut |ga| {
                    for (k, x) in ga.iter_mut().enumerate() {
                        *x += g[k] * rv[k % n];
                    }
                });
                acc(*row, &mut |gr| {
                    for (k, (&gi, &ai)) in g.iter().zip(av).enumerate() {
                        gr[k % n] += gi * ai;
                    }
                });
            }
            Op::MulCol(a, col) => {
                let n = dims(*a).1;
                let (av, cv) = (val(*a), val(*col));
                acc(*a, &mut |ga| {
                    for (k, x) in ga.iter_mut().enumerate() {
                        *x += g[k] * cv[k / n];
                    }
                });
                acc(*col, &mut |gc| {
                    for (k, (&gi, &ai)) in g.iter().zip(av).enumerate() {
                        gc[k / n] += gi * ai;
                    }
                });
            }
            Op::Affine(a, scale) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += scale * y));
            }
            Op::Gelu(a) => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, gi), &ai) in ga.iter_mut().zip(g).zip(av) {
                        *x += gi * gelu_grad(ai);
                    }
                });
            }
            Op::Sigmoid(a) => {
                acc(*a, &mut |ga| {
                    for ((x, gi), &s) in ga.iter_mut().zip(g).zip(out) {
                        *x += gi * s * (1.0 - s);
                    }
                });
            }
            Op::Log { x: a, floor } => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((x, gi), &ai) in ga.iter_mut().zip(g).zip(av) {
                        if ai > *floor {
                            *x += gi / ai;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = dims(*a).1;
                acc(*a, &mut |ga| {
                    for ((gr, yr), xr) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((x, gi), yi) in xr.iter_mut().zip(gr).zip(yr) {
                            *x += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::ConcatCols(parts) => {
                let m = dims(parts[0]).0;
                let n: usize = parts.iter().map(|&p| dims(p).1).sum();
                let mut offset = 0;
                for &p in parts {
                    let w = dims(p).1;
                    acc(p, &mut |gp| {
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * n + offset..r * n + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    acc(p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::GatherRows(a, indices) => {
                let n = dims(*a).1;
                acc(*a, &mut |ga| {
                    for (k, &r) in indices.iter().enumerate() {
                        add_into(&mut ga[r * n..(r + 1) * n], &g[k * n..(k + 1) * n]);
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let n = dims(*a).1;
                let w = nodes[i].value.cols();
                acc(*a, &mut |ga| {
                    for (r, chunk) in g.chunks(w).enumerate() {
                        add_into(&mut ga[r * n + start..r * n + start + w], chunk);
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = dims(*a);
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Element(a, flat) => {
                acc(*a, &mut |ga| ga[*flat] += g[0]);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let n = dims(*x).1;
                let gs = val(*gamma);
                acc(*gamma, &mut |gg| {
                    for (gr, xr) in g.chunks(n).zip(normalized.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for gr in g.chunks(n) {
                        add_into(gb, gr);
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, (gr, xr)) in g.chunks(n).zip(normalized.chunks(n)).enumerate() {
                        let dxh: Vec<f64> = gr.iter().zip(gs).map(|(a, b)| a * b).collect();
                        let mean_d = dxh.iter().sum::<f64>() / n as f64;
                        let mean_dx = dxh.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx[r * n + j] += inv_std[r] * (dxh[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                });
            }
            Op::SpanPool {
                h,
                scores,
                spans,
                weights,
            } => {
                let d = dims(*h).1;
                let hs = val(*h);
                acc(*h, &mut |gh| {
                    for (k, (&(s, _), w)) in spans.iter().zip(weights).enumerate() {
                        let gr = &g[k * d..(k + 1) * d];
                        for (t, &wt) in w.iter().enumerate() {
                            let row = &mut gh[(s + t) * d..(s + t + 1) * d];
                            for (x, gi) in row.iter_mut().zip(gr) {
                                *x += wt * gi;
                            }
                        }
                    }
                });
                acc(*scores, &mut |gsc| {
                    for (k, (&(s, _), w)) in spans.iter().zip(weights).enumerate() {
                        let gr = &g[k * d..(k + 1) * d];
                        let dots: Vec<f64> = (0..w.len())
                            .map(|t| {
                                hs[(s + t) * d..(s + t + 1) * d]
                                    .iter()
                                    .zip(gr)
                                    .map(|(a, b)| a * b)
                                    .sum()
                            })
                            .collect();
                        let mean: f64 = w.iter().zip(&dots).map(|(a, b)| a * b).sum();
                        for t in 0..w.len() {
                            gsc[s + t] += w[t] * (dots[t] - mean);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}
