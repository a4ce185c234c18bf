//! Reverse-mode automatic differentiation over a flat tape.
//!
//! A [`Graph`] records tensor-level operations; [`Graph::backward`] walks
//! the tape in reverse and accumulates gradients additively, so a value
//! used twice receives both contributions. Gradients are only propagated
//! into subgraphs that can reach a differentiable leaf, which keeps
//! constant inputs (region features, noise draws) out of the backward
//! kernels.
//!
//! The primitive set is exactly what the model needs: fused linear maps,
//! elementwise arithmetic, concatenation, stable softmax / log-softmax,
//! L2 normalization, weighted sums, and the hard/soft selection used by
//! the straight-through estimator.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const L2_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `w x + b` with `w: [m,n]`, `x: [n]`, optional `b: [m]`.
    Linear { w: Var, x: Var, b: Option<Var> },
    /// Row `row` of a `[rows, cols]` matrix.
    Row { table: Var, row: usize },
    Add(Var, Var),
    AddN(Vec<Var>),
    Mul(Var, Var),
    Scale(Var),
    Concat(Vec<Var>),
    SumAll(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize(Var),
    /// `Σ_i weights[i] · items[i]`; weights is a vector of `items.len()`.
    WeightedSum { weights: Var, items: Vec<Var> },
    /// Scalars stacked into a vector.
    Stack(Vec<Var>),
    /// Single element of a vector, as a scalar.
    Pick { v: Var, index: usize },
    /// Forward: `branches[hard]`. Backward: gradients flow to `soft` as if
    /// the output were `Σ_k soft[k]·branches[k]`, and to the selected
    /// branch only (mix with `soft + detach(onehot(hard) − soft)`).
    HardMix { soft: Var, branches: Vec<Var>, hard: usize },
}

pub struct Graph<F: Real> {
    ops: Vec<Op>,
    values: Vec<Vec<F>>,
    shapes: Vec<Vec<usize>>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Vec<F>>>,
    /// Extra per-op scalar (the factor of `Scale`).
    factors: Vec<F>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            ops: Vec::new(),
            values: Vec::new(),
            shapes: Vec::new(),
            needs_grad: Vec::new(),
            grads: Vec::new(),
            factors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<F>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.ops.push(op);
        self.values.push(value);
        self.shapes.push(shape);
        self.needs_grad.push(needs_grad);
        self.grads.push(None);
        self.factors.push(F::zero());
        Var(self.ops.len() - 1)
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&mut self, shape: Vec<usize>, value: Vec<F>) -> Var {
        self.push(Op::Leaf, shape, value, true)
    }

    /// Non-differentiable leaf (an input or a fixed draw).
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<F>) -> Var {
        self.push(Op::Leaf, shape, value, false)
    }

    pub fn constant_vector(&mut self, value: Vec<F>) -> Var {
        let n = value.len();
        self.constant(vec![n], value)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.shapes[v.0]
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> F {
        debug_assert_eq!(self.values[v.0].len(), 1);
        self.values[v.0][0]
    }

    /// Accumulated gradient of a node, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }

    /// Zeroes every gradient on the tape.
    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn vector_len(&self, v: Var, context: &'static str) -> Result<usize> {
        match self.shapes[v.0].as_slice() {
            [n] => Ok(*n),
            other => Err(Error::shape(context, "a vector", format!("{other:?}"))),
        }
    }

    // ── primitives ──────────────────────────────────────────────────

    /// Fully connected map `w x + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.linear_impl(x, w, Some(b))
    }

    /// Matrix-vector product without a bias.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.linear_impl(x, w, None)
    }

    fn linear_impl(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, n) = match self.shapes[w.0].as_slice() {
            [m, n] => (*m, *n),
            other => return Err(Error::shape("linear weight", "a matrix", format!("{other:?}"))),
        };
        let xn = self.vector_len(x, "linear input")?;
        if xn != n {
            return Err(Error::shape("linear", format!("input of length {n}"), xn));
        }
        if let Some(b) = b {
            let bn = self.vector_len(b, "linear bias")?;
            if bn != m {
                return Err(Error::shape("linear", format!("bias of length {m}"), bn));
            }
        }
        let wv = &self.values[w.0];
        let xv = &self.values[x.0];
        let mut out = match b {
            Some(b) => self.values[b.0].clone(),
            None => vec![F::zero(); m],
        };
        for i in 0..m {
            let row = &wv[i * n..(i + 1) * n];
            let mut acc = F::zero();
            for (wij, xj) in row.iter().zip(xv) {
                acc = acc + *wij * *xj;
            }
            out[i] = out[i] + acc;
        }
        let needs = self.needs_grad[w.0]
            || self.needs_grad[x.0]
            || b.map(|b| self.needs_grad[b.0]).unwrap_or(false);
        Ok(self.push(Op::Linear { w, x, b }, vec![m], out, needs))
    }

    /// Row of an embedding matrix.
    pub fn row(&mut self, table: Var, row: usize) -> Result<Var> {
        let (rows, cols) = match self.shapes[table.0].as_slice() {
            [r, c] => (*r, *c),
            other => return Err(Error::shape("row", "a matrix", format!("{other:?}"))),
        };
        if row >= rows {
            return Err(Error::shape("row", format!("row index < {rows}"), row));
        }
        let value = self.values[table.0][row * cols..(row + 1) * cols].to_vec();
        let needs = self.needs_grad[table.0];
        Ok(self.push(Op::Row { table, row }, vec![cols], value, needs))
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        if self.shapes[a.0] != self.shapes[b.0] {
            return Err(Error::shape(
                context,
                format!("{:?}", self.shapes[a.0]),
                format!("{:?}", self.shapes[b.0]),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value: Vec<F> = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| *x + *y)
            .collect();
        let needs = self.needs_grad[a.0] || self.needs_grad[b.0];
        Ok(self.push(Op::Add(a, b), self.shapes[a.0].clone(), value, needs))
    }

    /// Sum of one or more same-shaped tensors.
    pub fn add_n(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::EmptyInput { op: "add_n" })?;
        for v in &inputs[1..] {
            self.same_shape(first, *v, "add_n")?;
        }
        let mut value = self.values[first.0].clone();
        for v in &inputs[1..] {
            for (o, x) in value.iter_mut().zip(&self.values[v.0]) {
                *o = *o + *x;
            }
        }
        let needs = inputs.iter().any(|v| self.needs_grad[v.0]);
        Ok(self.push(Op::AddN(inputs.to_vec()), self.shapes[first.0].clone(), value, needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value: Vec<F> = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| *x * *y)
            .collect();
        let needs = self.needs_grad[a.0] || self.needs_grad[b.0];
        Ok(self.push(Op::Mul(a, b), self.shapes[a.0].clone(), value, needs))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let value: Vec<F> = self.values[a.0].iter().map(|x| *x * k).collect();
        let needs = self.needs_grad[a.0];
        let v = self.push(Op::Scale(a), self.shapes[a.0].clone(), value, needs);
        self.factors[v.0] = k;
        v
    }

    /// Concatenation of vectors along axis 0.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput { op: "concat" });
        }
        let mut value = Vec::new();
        for v in inputs {
            self.vector_len(*v, "concat")?;
            value.extend_from_slice(&self.values[v.0]);
        }
        let n = value.len();
        let needs = inputs.iter().any(|v| self.needs_grad[v.0]);
        Ok(self.push(Op::Concat(inputs.to_vec()), vec![n], value, needs))
    }

    /// Sum of all elements (axis-0 reduction for vectors), as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: F = self.values[a.0].iter().copied().sum();
        let needs = self.needs_grad[a.0];
        self.push(Op::SumAll(a), vec![1], vec![total], needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value: Vec<F> = self.values[a.0].iter().map(|x| stable_sigmoid(*x)).collect();
        let needs = self.needs_grad[a.0];
        self.push(Op::Sigmoid(a), self.shapes[a.0].clone(), value, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value: Vec<F> = self.values[a.0].iter().map(|x| x.tanh()).collect();
        let needs = self.needs_grad[a.0];
        self.push(Op::Tanh(a), self.shapes[a.0].clone(), value, needs)
    }

    /// Stable softmax over a vector (max-subtracted).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.vector_len(a, "softmax")?;
        let value = softmax_values(&self.values[a.0]);
        let needs = self.needs_grad[a.0];
        Ok(self.push(Op::Softmax(a), self.shapes[a.0].clone(), value, needs))
    }

    /// `v − max − log Σ exp(v − max)` over a vector.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.vector_len(a, "log_softmax")?;
        let value = log_softmax_values(&self.values[a.0]);
        let needs = self.needs_grad[a.0];
        Ok(self.push(Op::LogSoftmax(a), self.shapes[a.0].clone(), value, needs))
    }

    /// `v / max(‖v‖₂, 1e-12)`; zero vectors pass through as zeros.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        self.vector_len(a, "l2_normalize")?;
        let eps = F::from_f64(L2_EPS);
        let norm = l2_norm(&self.values[a.0]);
        let denom = if norm > eps { norm } else { eps };
        let value: Vec<F> = self.values[a.0].iter().map(|x| *x / denom).collect();
        let needs = self.needs_grad[a.0];
        Ok(self.push(Op::L2Normalize(a), self.shapes[a.0].clone(), value, needs))
    }

    /// `Σ_i weights[i] · items[i]` with a vector of weights.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let n = self.vector_len(weights, "weighted_sum weights")?;
        if items.is_empty() {
            return Err(Error::EmptyInput { op: "weighted_sum" });
        }
        if n != items.len() {
            return Err(Error::shape("weighted_sum", format!("{} weights", items.len()), n));
        }
        let first = items[0];
        for v in &items[1..] {
            self.same_shape(first, *v, "weighted_sum")?;
        }
        let dim = self.values[first.0].len();
        let mut value = vec![F::zero(); dim];
        for (i, item) in items.iter().enumerate() {
            let wi = self.values[weights.0][i];
            for (o, x) in value.iter_mut().zip(&self.values[item.0]) {
                *o = *o + wi * *x;
            }
        }
        let needs =
            self.needs_grad[weights.0] || items.iter().any(|v| self.needs_grad[v.0]);
        Ok(self.push(
            Op::WeightedSum { weights, items: items.to_vec() },
            self.shapes[first.0].clone(),
            value,
            needs,
        ))
    }

    /// Scalars stacked into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(Error::EmptyInput { op: "stack" });
        }
        let mut value = Vec::with_capacity(scalars.len());
        for v in scalars {
            if self.values[v.0].len() != 1 {
                return Err(Error::shape("stack", "scalars", format!("{:?}", self.shapes[v.0])));
            }
            value.push(self.values[v.0][0]);
        }
        let needs = scalars.iter().any(|v| self.needs_grad[v.0]);
        Ok(self.push(Op::Stack(scalars.to_vec()), vec![scalars.len()], value, needs))
    }

    /// One element of a vector as a scalar.
    pub fn pick(&mut self, v: Var, index: usize) -> Result<Var> {
        let n = self.vector_len(v, "pick")?;
        if index >= n {
            return Err(Error::shape("pick", format!("index < {n}"), index));
        }
        let value = vec![self.values[v.0][index]];
        let needs = self.needs_grad[v.0];
        Ok(self.push(Op::Pick { v, index }, vec![1], value, needs))
    }

    /// Hard selection with straight-through gradients (see [`Op::HardMix`]).
    pub fn hard_mix(&mut self, soft: Var, branches: &[Var], hard: usize) -> Result<Var> {
        let n = self.vector_len(soft, "hard_mix weights")?;
        if branches.is_empty() {
            return Err(Error::EmptyInput { op: "hard_mix" });
        }
        if n != branches.len() || hard >= n {
            return Err(Error::shape(
                "hard_mix",
                format!("{} branches and hard < {}", n, n),
                format!("{} branches, hard = {hard}", branches.len()),
            ));
        }
        let first = branches[0];
        for v in &branches[1..] {
            self.same_shape(first, *v, "hard_mix")?;
        }
        let value = self.values[branches[hard].0].clone();
        let needs =
            self.needs_grad[soft.0] || branches.iter().any(|v| self.needs_grad[v.0]);
        Ok(self.push(
            Op::HardMix { soft, branches: branches.to_vec(), hard },
            self.shapes[first.0].clone(),
            value,
            needs,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Accumulates `∂output/∂node` into every node that reaches `output`.
    ///
    /// `output` must be scalar. Repeated calls keep accumulating, so the
    /// gradient of a sum can be assembled from separate backward passes.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.values[output.0].len() != 1 {
            return Err(Error::NonScalarBackward { shape: self.shapes[output.0].clone() });
        }
        let eps = F::from_f64(L2_EPS);
        accumulate(&mut self.grads[output.0], &[F::one()], 1);
        for i in (0..=output.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            // Split borrows: values are read-only during the sweep, grads of
            // inputs (indices < i) are written through `self.grads`.
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Linear { w, x, b } => {
                    let (m, n) = (self.shapes[w.0][0], self.shapes[w.0][1]);
                    if self.needs_grad[w.0] {
                        let xv = &self.values[x.0];
                        let gw = grad_buf(&mut self.grads[w.0], m * n);
                        for (gi, grow) in g.iter().zip(gw.chunks_exact_mut(n)) {
                            for (gwij, xj) in grow.iter_mut().zip(xv) {
                                *gwij = *gwij + *gi * *xj;
                            }
                        }
                    }
                    if self.needs_grad[x.0] {
                        let wv = &self.values[w.0];
                        let gx = grad_buf(&mut self.grads[x.0], n);
                        for (gi, wrow) in g.iter().zip(wv.chunks_exact(n)) {
                            for (gxj, wij) in gx.iter_mut().zip(wrow) {
                                *gxj = *gxj + *gi * *wij;
                            }
                        }
                    }
                    if let Some(b) = b {
                        if self.needs_grad[b.0] {
                            accumulate(&mut self.grads[b.0], &g, m);
                        }
                    }
                }
                Op::Row { table, row } => {
                    if self.needs_grad[table.0] {
                        let cols = self.shapes[table.0][1];
                        let total = self.values[table.0].len();
                        let gt = grad_buf(&mut self.grads[table.0], total);
                        for (dst, src) in gt[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                            *dst = *dst + *src;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs_grad[a.0] {
                        accumulate(&mut self.grads[a.0], &g, g.len());
                    }
                    if self.needs_grad[b.0] {
                        accumulate(&mut self.grads[b.0], &g, g.len());
                    }
                }
                Op::AddN(inputs) => {
                    for v in inputs.clone() {
                        if self.needs_grad[v.0] {
                            accumulate(&mut self.grads[v.0], &g, g.len());
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs_grad[a.0] {
                        let bv = &self.values[b.0];
                        let ga = grad_buf(&mut self.grads[a.0], g.len());
                        for ((d, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *d = *d + *gi * *bi;
                        }
                    }
                    if self.needs_grad[b.0] {
                        let av = &self.values[a.0];
                        let gb = grad_buf(&mut self.grads[b.0], g.len());
                        for ((d, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                            *d = *d + *gi * *ai;
                        }
                    }
                }
                Op::Scale(a) => {
                    let a = *a;
                    if self.needs_grad[a.0] {
                        let k = self.factors[i];
                        let ga = grad_buf(&mut self.grads[a.0], g.len());
                        for (d, gi) in ga.iter_mut().zip(&g) {
                            *d = *d + *gi * k;
                        }
                    }
                }
                Op::Concat(inputs) => {
                    let mut offset = 0;
                    for v in inputs.clone() {
                        let len = self.values[v.0].len();
                        if self.needs_grad[v.0] {
                            let gv = grad_buf(&mut self.grads[v.0], len);
                            for (d, gi) in gv.iter_mut().zip(&g[offset..offset + len]) {
                                *d = *d + *gi;
                            }
                        }
                        offset += len;
                    }
                }
                Op::SumAll(a) => {
                    let a = *a;
                    if self.needs_grad[a.0] {
                        let len = self.values[a.0].len();
                        let g0 = g[0];
                        let ga = grad_buf(&mut self.grads[a.0], len);
                        for d in ga.iter_mut() {
                            *d = *d + g0;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    if self.needs_grad[a.0] {
                        let yv = &self.values[i];
                        let ga = grad_buf(&mut self.grads[a.0], g.len());
                        for ((d, gi), y) in ga.iter_mut().zip(&g).zip(yv) {
                            *d = *d + *gi * *y * (F::one() - *y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    if self.needs_grad[a.0] {
                        let yv = &self.values[i];
                        let ga = grad_buf(&mut self.grads[a.0], g.len());
                        for ((d, gi), y) in ga.iter_mut().zip(&g).zip(yv) {
                            *d = *d + *gi * (F::one() - *y * *y);
                        }
                    }
                }
                Op::Softmax(a) => {
                    let a = *a;
                    if self.needs_grad[a.0] {
                        let yv = &self.values[i];
                        let dot: F = g.iter().zip(yv).map(|(gi, y)| *gi * *y).sum();
                        let ga = grad_buf(&mut self.grads[a.0], g.len());
                        for ((d, gi), y) in ga.iter_mut().zip(&g).zip(yv) {
                            *d = *d + *y * (*gi - dot);
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let a = *a;
                    if self.needs_grad[a.0] {
                        let yv = &self.values[i];
                        let gsum: F = g.iter().copied().sum();
                        let ga = grad_buf(&mut self.grads[a.0], g.len());
                        for ((d, gi), y) in ga.iter_mut().zip(&g).zip(yv) {
                            *d = *d + *gi - y.exp() * gsum;
                        }
                    }
                }
                Op::L2Normalize(a) => {
                    let a = *a;
                    if self.needs_grad[a.0] {
                        let xv = &self.values[a.0];
                        let norm = l2_norm(xv);
                        let ga = grad_buf(&mut self.grads[a.0], g.len());
                        if norm > eps {
                            let yv = &self.values[i];
                            let dot: F = g.iter().zip(yv).map(|(gi, y)| *gi * *y).sum();
                            for ((d, gi), y) in ga.iter_mut().zip(&g).zip(yv) {
                                *d = *d + (*gi - *y * dot) / norm;
                            }
                        } else {
                            for (d, gi) in ga.iter_mut().zip(&g) {
                                *d = *d + *gi / eps;
                            }
                        }
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let weights = *weights;
                    for (k, item) in items.clone().into_iter().enumerate() {
                        if self.needs_grad[weights.0] {
                            let dot: F = g
                                .iter()
                                .zip(&self.values[item.0])
                                .map(|(gi, x)| *gi * *x)
                                .sum();
                            let gw = grad_buf(&mut self.grads[weights.0], self.values[weights.0].len());
                            gw[k] = gw[k] + dot;
                        }
                        if self.needs_grad[item.0] {
                            let wk = self.values[weights.0][k];
                            let gi_buf = grad_buf(&mut self.grads[item.0], g.len());
                            for (d, gi) in gi_buf.iter_mut().zip(&g) {
                                *d = *d + wk * *gi;
                            }
                        }
                    }
                }
                Op::Stack(scalars) => {
                    for (k, v) in scalars.clone().into_iter().enumerate() {
                        if self.needs_grad[v.0] {
                            let gv = grad_buf(&mut self.grads[v.0], 1);
                            gv[0] = gv[0] + g[k];
                        }
                    }
                }
                Op::Pick { v, index } => {
                    let (v, index) = (*v, *index);
                    if self.needs_grad[v.0] {
                        let len = self.values[v.0].len();
                        let gv = grad_buf(&mut self.grads[v.0], len);
                        gv[index] = gv[index] + g[0];
                    }
                }
                Op::HardMix { soft, branches, hard } => {
                    let (soft, hard) = (*soft, *hard);
                    for (k, branch) in branches.clone().into_iter().enumerate() {
                        if self.needs_grad[soft.0] {
                            let dot: F = g
                                .iter()
                                .zip(&self.values[branch.0])
                                .map(|(gi, x)| *gi * *x)
                                .sum();
                            let gs = grad_buf(&mut self.grads[soft.0], self.values[soft.0].len());
                            gs[k] = gs[k] + dot;
                        }
                        if k == hard && self.needs_grad[branch.0] {
                            accumulate(&mut self.grads[branch.0], &g, g.len());
                        }
                    }
                }
            }
            // The output's own gradient stays readable after the pass.
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

fn grad_buf<F: Real>(slot: &mut Option<Vec<F>>, len: usize) -> &mut [F] {
    slot.get_or_insert_with(|| vec![F::zero(); len])
}

fn accumulate<F: Real>(slot: &mut Option<Vec<F>>, delta: &[F], len: usize) {
    let buf = grad_buf(slot, len);
    for (d, x) in buf.iter_mut().zip(delta) {
        *d = *d + *x;
    }
}

fn stable_sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn l2_norm<F: Real>(v: &[F]) -> F {
    v.iter().map(|x| *x * *x).sum::<F>().sqrt()
}

pub(crate) fn softmax_values<F: Real>(v: &[F]) -> Vec<F> {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = v.iter().map(|x| (*x - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn log_softmax_values<F: Real>(v: &[F]) -> Vec<F> {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = v.iter().map(|x| (*x - max).exp()).sum::<F>().ln();
    v.iter().map(|x| *x - max - lse).collect()
}

/// Index of the largest element; ties break toward the lower index.
pub fn argmax<F: Real>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
