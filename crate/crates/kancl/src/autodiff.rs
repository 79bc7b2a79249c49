//! Eager tape-based reverse-mode autodiff over dense f32 tensors.
//!
//! Values are stored in f32; every reduction (matmul inner products, softmax
//! and layer-norm statistics, loss means) accumulates in f64 so gradient
//! checks stay tight. A [`Graph`] records executed ops in order; `backward`
//! walks the tape once in reverse. Graphs are cheap and meant to be built
//! fresh every training step; parameters live outside as [`Tensor`]s and are
//! re-registered with [`Graph::param`] (an O(1) Arc clone).
//!
//! A Graph and its vars are confined to one thread; there is no locking.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spline::{RbfGrid, SplineGrid};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// matrix + broadcast row vector
    AddRow(Var, Var),
    Scale(Var, f32),
    Exp(Var),
    Ln(Var),
    Silu(Var),
    /// row-wise softmax; backward reads the cached output value
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        labels: Arc<Vec<usize>>,
        probs: Vec<f32>,
    },
    BsplineBasis { x: Var, grid: SplineGrid },
    RbfBasis { x: Var, grid: RbfGrid },
    /// repeat each element of a row `reps` times: [a,b] -> [a, b*reps]
    ExpandInner { x: Var, reps: usize },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            // NaN/Inf detection is an error surface in debug, off in release
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked leaf: data flows forward, no gradient is accumulated.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Tracked leaf: gradient is available after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if one was computed.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).unwrap())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, op: Op, name: &'static str) -> Result<Var> {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Matmul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::LayerNorm { x, gamma, beta, .. } => {
                self.nodes[x.0].needs_grad
                    || self.nodes[gamma.0].needs_grad
                    || self.nodes[beta.0].needs_grad
            }
            Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Silu(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::SliceRows { x: a, .. }
            | Op::SliceCols { x: a, .. }
            | Op::CrossEntropy { logits: a, .. }
            | Op::BsplineBasis { x: a, .. }
            | Op::RbfBasis { x: a, .. }
            | Op::ExpandInner { x: a, .. } => self.nodes[a.0].needs_grad,
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => {
                vs.iter().any(|v| self.nodes[v.0].needs_grad)
            }
        };
        let value = Tensor::new(shape, data)?;
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.nodes[a.0].value.shape().to_vec(),
            rhs: self.nodes[b.0].value.shape().to_vec(),
        }
    }

    // ---- ops -----------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.nodes[a.0].value.dims2();
        let (kb, n) = self.nodes[b.0].value.dims2();
        if ka != kb {
            return Err(self.shape_err("matmul", a, b));
        }
        let data = mm_nn(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            ka,
            n,
        );
        self.push(vec![m, n], data, Op::Matmul(a, b), "matmul")
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(self.shape_err(name, a, b));
        }
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(self.nodes[a.0].value.shape().to_vec(), data, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `[m,n] + [n]` row broadcast (bias add, logit masking).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2();
        if self.nodes[row.0].value.numel() != n {
            return Err(self.shape_err("add_row", a, row));
        }
        let av = self.nodes[a.0].value.data();
        let rv = self.nodes[row.0].value.data();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                data.push(av[i * n + j] + rv[j]);
            }
        }
        self.push(
            self.nodes[a.0].value.shape().to_vec(),
            data,
            Op::AddRow(a, row),
            "add_row",
        )
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        let data = self.nodes[a.0].value.data().iter().map(|&x| x * c).collect();
        self.push(
            self.nodes[a.0].value.shape().to_vec(),
            data,
            Op::Scale(a, c),
            "scale",
        )
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|&x| (x as f64).exp() as f32)
            .collect();
        self.push(self.nodes[a.0].value.shape().to_vec(), data, Op::Exp(a), "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|&x| (x as f64).ln() as f32)
            .collect();
        self.push(self.nodes[a.0].value.shape().to_vec(), data, Op::Ln(a), "ln")
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .map(|&x| {
                let xd = x as f64;
                (xd / (1.0 + (-xd).exp())) as f32
            })
            .collect();
        self.push(self.nodes[a.0].value.shape().to_vec(), data, Op::Silu(a), "silu")
    }

    /// Row-wise softmax with max-subtraction; rows sum to 1.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2();
        let av = self.nodes[a.0].value.data();
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut sum = 0.0f64;
            let mut ex = vec![0.0f64; n];
            for j in 0..n {
                ex[j] = (row[j] as f64 - mx).exp();
                sum += ex[j];
            }
            for j in 0..n {
                data[i * n + j] = (ex[j] / sum) as f32;
            }
        }
        self.push(
            self.nodes[a.0].value.shape().to_vec(),
            data,
            Op::Softmax(a),
            "softmax",
        )
    }

    /// Row-wise layer norm over the last dimension with learned affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Param(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (m, n) = self.nodes[x.0].value.dims2();
        if self.nodes[gamma.0].value.numel() != n || self.nodes[beta.0].value.numel() != n {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        let xv = self.nodes[x.0].value.data();
        let gv = self.nodes[gamma.0].value.data();
        let bv = self.nodes[beta.0].value.data();
        let mut data = vec![0.0f32; m * n];
        let mut xhat = vec![0.0f32; m * n];
        let mut inv_std = vec![0.0f64; m];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = row
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            let istd = 1.0 / (var + eps as f64).sqrt();
            inv_std[i] = istd;
            for j in 0..n {
                let xh = ((row[j] as f64 - mean) * istd) as f32;
                xhat[i * n + j] = xh;
                data[i * n + j] = gv[j] * xh + bv[j];
            }
        }
        self.push(
            self.nodes[x.0].value.shape().to_vec(),
            data,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    /// Full reduction to a scalar (f64 accumulation).
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].value.data().iter().map(|&v| v as f64).sum();
        self.push(vec![1], vec![s as f32], Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.numel();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f32)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2();
        let av = self.nodes[a.0].value.data();
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = av[i * n + j];
            }
        }
        self.push(vec![n, m], data, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.nodes[a.0].value.reshaped(shape)?;
        let data = v.data().to_vec();
        self.push(v.shape().to_vec(), data, Op::Reshape(a), "reshape")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2();
        if start + len > m || len == 0 {
            return Err(Error::Param(format!(
                "slice_rows [{start}, {}) out of {m} rows",
                start + len
            )));
        }
        let data = self.nodes[a.0].value.data()[start * n..(start + len) * n].to_vec();
        self.push(vec![len, n], data, Op::SliceRows { x: a, start }, "slice_rows")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.nodes[a.0].value.dims2();
        if start + len > n || len == 0 {
            return Err(Error::Param(format!(
                "slice_cols [{start}, {}) out of {n} cols",
                start + len
            )));
        }
        let av = self.nodes[a.0].value.data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        self.push(vec![m, len], data, Op::SliceCols { x: a, start }, "slice_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Param("concat_rows of nothing".into()));
        }
        let (_, n) = self.nodes[parts[0].0].value.dims2();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pm, pn) = self.nodes[p.0].value.dims2();
            if pn != n {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
            rows += pm;
            data.extend_from_slice(self.nodes[p.0].value.data());
        }
        self.push(vec![rows, n], data, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Param("concat_cols of nothing".into()));
        }
        let (m, _) = self.nodes[parts[0].0].value.dims2();
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.nodes[p.0].value.dims2();
            if pm != m {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
            widths.push(pn);
            total += pn;
        }
        let mut data = vec![0.0f32; m * total];
        let mut off = 0;
        for (idx, &p) in parts.iter().enumerate() {
            let w = widths[idx];
            let pv = self.nodes[p.0].value.data();
            for i in 0..m {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            off += w;
        }
        self.push(vec![m, total], data, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Mean cross-entropy over the batch, fused with a stable log-softmax.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (m, n) = self.nodes[logits.0].value.dims2();
        if labels.len() != m {
            return Err(Error::Param(format!(
                "cross_entropy: {m} logit rows vs {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Param(format!(
                "cross_entropy: label {bad} out of range for {n} classes"
            )));
        }
        let lv = self.nodes[logits.0].value.data();
        let mut probs = vec![0.0f32; m * n];
        let mut loss = 0.0f64;
        for i in 0..m {
            let row = &lv[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut sum = 0.0f64;
            for j in 0..n {
                sum += (row[j] as f64 - mx).exp();
            }
            let lse = mx + sum.ln();
            loss += lse - row[labels[i]] as f64;
            for j in 0..n {
                probs[i * n + j] = ((row[j] as f64 - mx).exp() / sum) as f32;
            }
        }
        loss /= m as f64;
        self.push(
            vec![1],
            vec![loss as f32],
            Op::CrossEntropy {
                logits,
                labels: Arc::new(labels.to_vec()),
                probs,
            },
            "cross_entropy",
        )
    }

    /// B-spline basis matrix: input of any shape is flattened to `[numel]`
    /// and expands to `[numel, num_basis]`.
    pub fn bspline_basis(&mut self, x: Var, grid: &SplineGrid) -> Result<Var> {
        let n = self.nodes[x.0].value.numel();
        let nb = grid.num_basis();
        let xv = self.nodes[x.0].value.data();
        let mut data = vec![0.0f32; n * nb];
        let mut row = vec![0.0f64; nb];
        for i in 0..n {
            grid.basis_row(xv[i] as f64, &mut row);
            for j in 0..nb {
                data[i * nb + j] = row[j] as f32;
            }
        }
        self.push(
            vec![n, nb],
            data,
            Op::BsplineBasis {
                x,
                grid: grid.clone(),
            },
            "bspline_basis",
        )
    }

    /// Gaussian RBF basis matrix, same layout as `bspline_basis`.
    pub fn rbf_basis(&mut self, x: Var, grid: &RbfGrid) -> Result<Var> {
        let n = self.nodes[x.0].value.numel();
        let nb = grid.num_basis();
        let xv = self.nodes[x.0].value.data();
        let mut data = vec![0.0f32; n * nb];
        let mut row = vec![0.0f64; nb];
        for i in 0..n {
            grid.basis_row(xv[i] as f64, &mut row);
            for j in 0..nb {
                data[i * nb + j] = row[j] as f32;
            }
        }
        self.push(
            vec![n, nb],
            data,
            Op::RbfBasis {
                x,
                grid: grid.clone(),
            },
            "rbf_basis",
        )
    }

    /// `[a,b] -> [a, b*reps]`, each element repeated `reps` times contiguously.
    pub fn expand_inner(&mut self, x: Var, reps: usize) -> Result<Var> {
        if reps == 0 {
            return Err(Error::Param("expand_inner with reps = 0".into()));
        }
        let (m, n) = self.nodes[x.0].value.dims2();
        let xv = self.nodes[x.0].value.data();
        let mut data = Vec::with_capacity(m * n * reps);
        for i in 0..m {
            for j in 0..n {
                let v = xv[i * n + j];
                data.extend(std::iter::repeat(v).take(reps));
            }
        }
        self.push(vec![m, n * reps], data, Op::ExpandInner { x, reps }, "expand_inner")
    }

    // ---- backward ------------------------------------------------------

    /// Reverse sweep from a scalar loss; fills `grad` on every reachable
    /// tracked node. Grads accumulate additively across uses.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Param(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::Param(
                "backward on an untracked graph: no parameter reaches the loss".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    fn acc<'a>(
        &self,
        grads: &'a mut [Option<Vec<f32>>],
        v: Var,
    ) -> Option<&'a mut Vec<f32>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(vec![0.0f32; self.nodes[v.0].value.numel()]);
        }
        slot.as_mut()
    }

    fn backprop_node(&self, idx: usize, gy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2();
                let n = self.nodes[b.0].value.dims2().1;
                if self.nodes[a.0].needs_grad {
                    let da = mm_nt(gy, self.nodes[b.0].value.data(), m, n, k);
                    if let Some(g) = self.acc(grads, *a) {
                        add_into(g, &da);
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let db = mm_tn(self.nodes[a.0].value.data(), gy, m, k, n);
                    if let Some(g) = self.acc(grads, *b) {
                        add_into(g, &db);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(g) = self.acc(grads, *a) {
                    add_into(g, gy);
                }
                if let Some(g) = self.acc(grads, *b) {
                    add_into(g, gy);
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.acc(grads, *a) {
                    add_into(g, gy);
                }
                if let Some(g) = self.acc(grads, *b) {
                    for (gi, &v) in g.iter_mut().zip(gy) {
                        *gi -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].needs_grad {
                    let other = self.nodes[b.0].value.data();
                    let contrib: Vec<f32> =
                        gy.iter().zip(other).map(|(&g, &o)| g * o).collect();
                    if let Some(ga) = self.acc(grads, a) {
                        add_into(ga, &contrib);
                    }
                }
                if self.nodes[b.0].needs_grad {
                    let other = self.nodes[a.0].value.data();
                    let contrib: Vec<f32> =
                        gy.iter().zip(other).map(|(&g, &o)| g * o).collect();
                    if let Some(gb) = self.acc(grads, b) {
                        add_into(gb, &contrib);
                    }
                }
            }
            Op::AddRow(a, row) => {
                let (m, n) = self.nodes[a.0].value.dims2();
                if let Some(g) = self.acc(grads, *a) {
                    add_into(g, gy);
                }
                if self.nodes[row.0].needs_grad {
                    let mut col_sums = vec![0.0f64; n];
                    for i in 0..m {
                        for j in 0..n {
                            col_sums[j] += gy[i * n + j] as f64;
                        }
                    }
                    if let Some(g) = self.acc(grads, *row) {
                        for j in 0..n {
                            g[j] += col_sums[j] as f32;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                if let Some(g) = self.acc(grads, *a) {
                    for (gi, &v) in g.iter_mut().zip(gy) {
                        *gi += v * c;
                    }
                }
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.data();
                let contrib: Vec<f32> = gy.iter().zip(y).map(|(&g, &v)| g * v).collect();
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, &contrib);
                }
            }
            Op::Ln(a) => {
                let x = self.nodes[a.0].value.data();
                let contrib: Vec<f32> = gy.iter().zip(x).map(|(&g, &v)| g / v).collect();
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, &contrib);
                }
            }
            Op::Silu(a) => {
                let x = self.nodes[a.0].value.data();
                let contrib: Vec<f32> = gy
                    .iter()
                    .zip(x)
                    .map(|(&g, &v)| {
                        let xd = v as f64;
                        let s = 1.0 / (1.0 + (-xd).exp());
                        (g as f64 * (s * (1.0 + xd * (1.0 - s)))) as f32
                    })
                    .collect();
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, &contrib);
                }
            }
            Op::Softmax(a) => {
                let (m, n) = self.nodes[idx].value.dims2();
                let y = self.nodes[idx].value.data();
                let mut contrib = vec![0.0f32; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &gy[i * n..(i + 1) * n];
                    let dot: f64 = yr
                        .iter()
                        .zip(gr)
                        .map(|(&yv, &gv)| yv as f64 * gv as f64)
                        .sum();
                    for j in 0..n {
                        contrib[i * n + j] = (yr[j] as f64 * (gr[j] as f64 - dot)) as f32;
                    }
                }
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, &contrib);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.nodes[x.0].value.dims2();
                let gv = self.nodes[gamma.0].value.data();
                if self.nodes[beta.0].needs_grad {
                    let mut db = vec![0.0f64; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += gy[i * n + j] as f64;
                        }
                    }
                    if let Some(g) = self.acc(grads, *beta) {
                        for j in 0..n {
                            g[j] += db[j] as f32;
                        }
                    }
                }
                if self.nodes[gamma.0].needs_grad {
                    let mut dg = vec![0.0f64; n];
                    for i in 0..m {
                        for j in 0..n {
                            dg[j] += gy[i * n + j] as f64 * xhat[i * n + j] as f64;
                        }
                    }
                    if let Some(g) = self.acc(grads, *gamma) {
                        for j in 0..n {
                            g[j] += dg[j] as f32;
                        }
                    }
                }
                if self.nodes[x.0].needs_grad {
                    let mut contrib = vec![0.0f32; m * n];
                    for i in 0..m {
                        let mut mean_dxhat = 0.0f64;
                        let mut mean_dxhat_xhat = 0.0f64;
                        for j in 0..n {
                            let dxh = gy[i * n + j] as f64 * gv[j] as f64;
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat[i * n + j] as f64;
                        }
                        mean_dxhat /= n as f64;
                        mean_dxhat_xhat /= n as f64;
                        for j in 0..n {
                            let dxh = gy[i * n + j] as f64 * gv[j] as f64;
                            contrib[i * n + j] = (inv_std[i]
                                * (dxh - mean_dxhat - xhat[i * n + j] as f64 * mean_dxhat_xhat))
                                as f32;
                        }
                    }
                    if let Some(g) = self.acc(grads, *x) {
                        add_into(g, &contrib);
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = gy[0];
                if let Some(g) = self.acc(grads, *a) {
                    for gi in g.iter_mut() {
                        *gi += g0;
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.nodes[a.0].value.dims2();
                // gy has shape [n, m]
                let mut contrib = vec![0.0f32; m * n];
                for i in 0..n {
                    for j in 0..m {
                        contrib[j * n + i] = gy[i * m + j];
                    }
                }
                if let Some(g) = self.acc(grads, *a) {
                    add_into(g, &contrib);
                }
            }
            Op::Reshape(a) => {
                if let Some(g) = self.acc(grads, *a) {
                    add_into(g, gy);
                }
            }
            Op::SliceRows { x, start } => {
                let (_, n) = self.nodes[x.0].value.dims2();
                let rows = self.nodes[idx].value.dims2().0;
                let start = *start;
                if let Some(g) = self.acc(grads, *x) {
                    for i in 0..rows {
                        for j in 0..n {
                            g[(start + i) * n + j] += gy[i * n + j];
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.nodes[x.0].value.dims2();
                let w = self.nodes[idx].value.dims2().1;
                let start = *start;
                if let Some(g) = self.acc(grads, *x) {
                    for i in 0..m {
                        for j in 0..w {
                            g[i * n + start + j] += gy[i * w + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let n = self.nodes[idx].value.dims2().1;
                let parts = parts.clone();
                let mut row_off = 0;
                for p in parts {
                    let pm = self.nodes[p.0].value.dims2().0;
                    if self.nodes[p.0].needs_grad {
                        let seg = &gy[row_off * n..(row_off + pm) * n];
                        if let Some(g) = self.acc(grads, p) {
                            add_into(g, seg);
                        }
                    }
                    row_off += pm;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = self.nodes[idx].value.dims2();
                let parts = parts.clone();
                let mut col_off = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.dims2().1;
                    if self.nodes[p.0].needs_grad {
                        let mut contrib = vec![0.0f32; m * w];
                        for i in 0..m {
                            contrib[i * w..(i + 1) * w].copy_from_slice(
                                &gy[i * total + col_off..i * total + col_off + w],
                            );
                        }
                        if let Some(g) = self.acc(grads, p) {
                            add_into(g, &contrib);
                        }
                    }
                    col_off += w;
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (m, n) = self.nodes[logits.0].value.dims2();
                let scale = gy[0] as f64 / m as f64;
                let labels = Arc::clone(labels);
                let mut contrib = vec![0.0f32; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let indicator = if labels[i] == j { 1.0 } else { 0.0 };
                        contrib[i * n + j] =
                            (scale * (probs[i * n + j] as f64 - indicator)) as f32;
                    }
                }
                if let Some(g) = self.acc(grads, *logits) {
                    add_into(g, &contrib);
                }
            }
            Op::BsplineBasis { x, grid } => {
                let n = self.nodes[x.0].value.numel();
                let nb = grid.num_basis();
                let xv = self.nodes[x.0].value.data();
                let mut contrib = vec![0.0f32; n];
                let mut row = vec![0.0f64; nb];
                let mut drow = vec![0.0f64; nb];
                for i in 0..n {
                    grid.basis_and_deriv_row(xv[i] as f64, &mut row, &mut drow);
                    let mut s = 0.0f64;
                    for j in 0..nb {
                        s += gy[i * nb + j] as f64 * drow[j];
                    }
                    contrib[i] = s as f32;
                }
                if let Some(g) = self.acc(grads, *x) {
                    add_into(g, &contrib);
                }
            }
            Op::RbfBasis { x, grid } => {
                let n = self.nodes[x.0].value.numel();
                let nb = grid.num_basis();
                let xv = self.nodes[x.0].value.data();
                let mut contrib = vec![0.0f32; n];
                let mut row = vec![0.0f64; nb];
                let mut drow = vec![0.0f64; nb];
                for i in 0..n {
                    grid.basis_and_deriv_row(xv[i] as f64, &mut row, &mut drow);
                    let mut s = 0.0f64;
                    for j in 0..nb {
                        s += gy[i * nb + j] as f64 * drow[j];
                    }
                    contrib[i] = s as f32;
                }
                if let Some(g) = self.acc(grads, *x) {
                    add_into(g, &contrib);
                }
            }
            Op::ExpandInner { x, reps } => {
                let (m, n) = self.nodes[x.0].value.dims2();
                let reps = *reps;
                if let Some(g) = self.acc(grads, *x) {
                    for i in 0..m {
                        for j in 0..n {
                            let mut s = 0.0f64;
                            for q in 0..reps {
                                s += gy[i * n * reps + j * reps + q] as f64;
                            }
                            g[i * n + j] += s as f32;
                        }
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// C = A·B, A [m,k], B [k,n]; ikj order with an f64 accumulator row.
fn mm_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..k {
            let aik = a[i * k + t] as f64;
            let brow = &b[t * n..(t + 1) * n];
            for j in 0..n {
                acc[j] += aik * brow[j] as f64;
            }
        }
        for j in 0..n {
            out[i * n + j] = acc[j] as f32;
        }
    }
    out
}

/// C = A·Bᵀ, A [m,k], B [n,k] (contraction over k via contiguous dots).
fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0f64;
            for t in 0..k {
                s += arow[t] as f64 * brow[t] as f64;
            }
            out[i * n + j] = s as f32;
        }
    }
    out
}

/// C = Aᵀ·B, A [m,k], B [m,n] -> C [k,n]; full f64 accumulator.
fn mm_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (t, &av) in arow.iter().enumerate() {
            let av = av as f64;
            let crow = &mut acc[t * n..(t + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j] as f64;
            }
        }
    }
    acc.iter().map(|&v| v as f32).collect()
}
