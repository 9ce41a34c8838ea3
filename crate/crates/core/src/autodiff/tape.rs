//! Define-by-run tape.
//!
//! Every primitive appends a node holding its forward value and the ids of
//! its inputs. Node ids are assigned in creation order, so a node's inputs
//! always precede it and a single reverse sweep visits each node once.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

/// Reduction used by [`Tape::masked_temporal_pool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Average,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    MaskedPool {
        input: Var,
        mask: Vec<bool>,
        steps: usize,
        weights: Vec<f64>,
    },
    Elementwise(ElementwiseOp, Var, Var),
    AddBias(Var, Var),
    Concat(Var, Var),
    Affine {
        input: Var,
        scale: f64,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    SelectRows {
        mask: Vec<bool>,
        when_set: Var,
        otherwise: Var,
    },
    Reshape(Var),
    Sum(Var),
    CrossEntropy {
        probs: Var,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Lower clamp applied inside the cross-entropy logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Gradient of the last `backward` loss with respect to `var`, if the
    /// variable was reachable and requires gradients.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Records `tensor` as a leaf. The leaf requires gradients iff the
    /// tensor does.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor.detached(), Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let value = if tensor.requires_grad() {
            tensor.detached()
        } else {
            tensor
        };
        self.push(value, Op::Leaf, false)
    }

    /// Adds this tape's gradient for `var` into `tensor.grad`.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) {
        if let (Some(src), Some(dst)) = (self.grad(var), tensor.grad_mut()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Gathers rows of a `[V, d]` table; output is `[indices.len(), d]`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::Dimension {
                op: "embedding_lookup",
                lhs: t.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        if indices.is_empty() {
            return Err(Error::Contract(
                "embedding lookup needs at least one index".into(),
            ));
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for (position, &index) in indices.iter().enumerate() {
            if index >= vocab {
                return Err(Error::Index {
                    index,
                    bound: vocab,
                    position,
                });
            }
            out.extend_from_slice(&t.data()[index * dim..(index + 1) * dim]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), dim], out),
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let out = v.data().iter().map(|&e| f(e)).collect();
        let shape = v.shape().to_vec();
        let rg = self.needs(&[x]);
        self.push(Tensor::from_parts(shape, out), op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |e| scale * e + shift, Op::Affine { input: x, scale })
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let k = v.last_dim();
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(k) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            let mut total = 0.0;
            for &e in row {
                let z = (e - max).exp();
                total += z;
                out.push(z);
            }
            out[start..].iter_mut().for_each(|z| *z /= total);
        }
        let shape = v.shape().to_vec();
        let rg = self.needs(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Softmax(x), rg)
    }

    /// Masked mean over the time axis of `[T, d]` (output `[d]`) or
    /// `[N, T, d]` (output `[N, d]`). `mask` has one flag per time step,
    /// row-major over `N x T`.
    pub fn masked_temporal_average(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        self.masked_temporal_pool(x, mask, Pooling::Average)
    }

    pub fn masked_temporal_pool(&mut self, x: Var, mask: &[bool], pooling: Pooling) -> Result<Var> {
        let v = self.value(x);
        let (batch, steps, dim, out_shape) = match *v.shape() {
            [t, d] => (1, t, d, vec![d]),
            [n, t, d] => (n, t, d, vec![n, d]),
            _ => {
                return Err(Error::Dimension {
                    op: "masked_temporal_average",
                    lhs: v.shape().to_vec(),
                    rhs: vec![mask.len()],
                })
            }
        };
        if mask.len() != batch * steps {
            return Err(Error::Dimension {
                op: "masked_temporal_average",
                lhs: v.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mut weights = Vec::with_capacity(batch);
        let mut out = vec![0.0; batch * dim];
        for row in 0..batch {
            let live = &mask[row * steps..(row + 1) * steps];
            let count = live.iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(Error::EmptySequence { row });
            }
            let w = match pooling {
                Pooling::Average => 1.0 / count as f64,
                Pooling::Sum => 1.0,
            };
            weights.push(w);
            let acc = &mut out[row * dim..(row + 1) * dim];
            for (t, _) in live.iter().enumerate().filter(|(_, &m)| m) {
                let base = (row * steps + t) * dim;
                for (a, &e) in acc.iter_mut().zip(&v.data()[base..base + dim]) {
                    *a += e;
                }
            }
            if pooling == Pooling::Average {
                acc.iter_mut().for_each(|a| *a /= count as f64);
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::MaskedPool {
                input: x,
                mask: mask.to_vec(),
                steps,
                weights,
            },
            rg,
        ))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, op: ElementwiseOp) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op: "elementwise",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let f = match op {
            ElementwiseOp::Add => |x: f64, y: f64| x + y,
            ElementwiseOp::Sub => |x: f64, y: f64| x - y,
            ElementwiseOp::Mul => |x: f64, y: f64| x * y,
        };
        let out = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = va.shape().to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Elementwise(op, a, b),
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseOp::Mul)
    }

    /// Adds a `[n]` bias to every row of `[.., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rank() != 1 || vx.last_dim() != vb.len() {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let out = vx
            .rows()
            .flat_map(|row| row.iter().zip(vb.data()).map(|(&e, &b)| e + b))
            .collect();
        let shape = vx.shape().to_vec();
        let rg = self.needs(&[x, bias]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBias(x, bias), rg))
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (ra, rb) = (va.rank(), vb.rank());
        if ra != rb || va.shape()[..ra - 1] != vb.shape()[..rb - 1] {
            return Err(Error::Dimension {
                op: "concat",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for (ra, rb) in va.rows().zip(vb.rows()) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() += vb.last_dim();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(a, b), rg))
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        check_dropout_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let v = self.value(x);
        let mask: Vec<f64> = (0..v.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = v.data().iter().zip(&mask).map(|(&e, &m)| e * m).collect();
        let shape = v.shape().to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Dropout { input: x, mask },
            rg,
        ))
    }

    /// Row-wise select between two `[N, d]` values: row `i` comes from
    /// `when_set` if `mask[i]`, else from `otherwise`.
    pub fn select_rows(&mut self, mask: &[bool], when_set: Var, otherwise: Var) -> Result<Var> {
        let (va, vb) = (self.value(when_set), self.value(otherwise));
        if va.shape() != vb.shape() || va.rank() != 2 || va.shape()[0] != mask.len() {
            return Err(Error::Dimension {
                op: "select_rows",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let out = va
            .rows()
            .zip(vb.rows())
            .zip(mask)
            .flat_map(|((ra, rb), &m)| (if m { ra } else { rb }).iter().copied())
            .collect();
        let shape = va.shape().to_vec();
        let rg = self.needs(&[when_set, otherwise]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::SelectRows {
                mask: mask.to_vec(),
                when_set,
                otherwise,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x);
        if shape.contains(&0) || shape.iter().product::<usize>() != v.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: v.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = v.data().to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Reshape(x), rg))
    }

    /// Sum of every entry, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Mean negative log-probability of the target class. `probs` is an
    /// `[N, K]` matrix of row distributions; the log input is clamped at
    /// [`LOG_CLAMP`].
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(probs);
        if v.rank() != 2 || v.shape()[0] != targets.len() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: v.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let k = v.shape()[1];
        let mut total = 0.0;
        for (position, (row, &t)) in v.rows().zip(targets).enumerate() {
            if t >= k {
                return Err(Error::Index {
                    index: t,
                    bound: k,
                    position,
                });
            }
            total -= row[t].max(LOG_CLAMP).ln();
        }
        let loss = total / targets.len() as f64;
        let rg = self.needs(&[probs]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients from an earlier call
    /// are discarded; parameter accumulation happens in
    /// [`Tape::accumulate_into`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "variable {} is not on this tape",
                loss.0
            )));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g);
            }
            self.grads[id] = Some(g);
        }
        // Only keep gradients for nodes that asked for them.
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(())
    }

    fn slot(&mut self, var: Var) -> Option<&mut Vec<f64>> {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(self.grads[var.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        // Temporarily move the op out so input values can be borrowed while
        // gradient slots are mutated.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if self.nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    let bd = self.value(*b).data().to_vec();
                    let slot = self.slot(*a).unwrap();
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bd[p * n + j];
                            }
                            slot[i * k + p] += s;
                        }
                    }
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    let ad = self.value(*a).data().to_vec();
                    let slot = self.slot(*b).unwrap();
                    for i in 0..m {
                        for p in 0..k {
                            let av = ad[i * k + p];
                            for j in 0..n {
                                slot[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::Embedding { table, indices } => {
                let dim = self.value(*table).shape()[1];
                if let Some(slot) = self.slot(*table) {
                    for (t, &index) in indices.iter().enumerate() {
                        for c in 0..dim {
                            slot[index * dim + c] += g[t * dim + c];
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data().to_vec();
                if let Some(slot) = self.slot(*x) {
                    for ((s, &e), &gi) in slot.iter_mut().zip(&xd).zip(g) {
                        if e > 0.0 {
                            *s += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[id].value.data().to_vec();
                if let Some(slot) = self.slot(*x) {
                    for ((s, &yi), &gi) in slot.iter_mut().zip(&y).zip(g) {
                        *s += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = self.nodes[id].value.data().to_vec();
                if let Some(slot) = self.slot(*x) {
                    for ((s, &yi), &gi) in slot.iter_mut().zip(&y).zip(g) {
                        *s += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Affine { input, scale } => {
                let scale = *scale;
                if let Some(slot) = self.slot(*input) {
                    for (s, &gi) in slot.iter_mut().zip(g) {
                        *s += gi * scale;
                    }
                }
            }
            Op::Softmax(x) => {
                let y = self.nodes[id].value.clone();
                let k = y.last_dim();
                if let Some(slot) = self.slot(*x) {
                    for ((sr, yr), gr) in slot.chunks_mut(k).zip(y.rows()).zip(g.chunks(k)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((s, &yi), &gi) in sr.iter_mut().zip(yr).zip(gr) {
                            *s += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::MaskedPool {
                input,
                mask,
                steps,
                weights,
            } => {
                let dim = self.value(*input).last_dim();
                let steps = *steps;
                if let Some(slot) = self.slot(*input) {
                    for (row, &w) in weights.iter().enumerate() {
                        for t in 0..steps {
                            if !mask[row * steps + t] {
                                continue;
                            }
                            let base = (row * steps + t) * dim;
                            for c in 0..dim {
                                slot[base + c] += w * g[row * dim + c];
                            }
                        }
                    }
                }
            }
            Op::Elementwise(kind, a, b) => {
                let (kind, a, b) = (*kind, *a, *b);
                let (ad, bd) = match kind {
                    ElementwiseOp::Mul => (
                        Some(self.value(a).data().to_vec()),
                        Some(self.value(b).data().to_vec()),
                    ),
                    _ => (None, None),
                };
                if let Some(slot) = self.slot(a) {
                    match &bd {
                        Some(other) => slot
                            .iter_mut()
                            .zip(g.iter().zip(other))
                            .for_each(|(s, (gi, o))| *s += gi * o),
                        None => slot.iter_mut().zip(g).for_each(|(s, gi)| *s += gi),
                    }
                }
                if let Some(slot) = self.slot(b) {
                    match (&ad, kind) {
                        (Some(other), _) => slot
                            .iter_mut()
                            .zip(g.iter().zip(other))
                            .for_each(|(s, (gi, o))| *s += gi * o),
                        (None, ElementwiseOp::Sub) => {
                            slot.iter_mut().zip(g).for_each(|(s, gi)| *s -= gi)
                        }
                        (None, _) => slot.iter_mut().zip(g).for_each(|(s, gi)| *s += gi),
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(slot) = self.slot(*x) {
                    slot.iter_mut().zip(g).for_each(|(s, gi)| *s += gi);
                }
                let n = self.value(*bias).len();
                if let Some(slot) = self.slot(*bias) {
                    for row in g.chunks(n) {
                        slot.iter_mut().zip(row).for_each(|(s, gi)| *s += gi);
                    }
                }
            }
            Op::Concat(a, b) => {
                let p = self.value(*a).last_dim();
                let q = self.value(*b).last_dim();
                if let Some(slot) = self.slot(*a) {
                    for (sr, gr) in slot.chunks_mut(p).zip(g.chunks(p + q)) {
                        sr.iter_mut().zip(&gr[..p]).for_each(|(s, gi)| *s += gi);
                    }
                }
                if let Some(slot) = self.slot(*b) {
                    for (sr, gr) in slot.chunks_mut(q).zip(g.chunks(p + q)) {
                        sr.iter_mut().zip(&gr[p..]).for_each(|(s, gi)| *s += gi);
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if let Some(slot) = self.slot(*input) {
                    for ((s, &gi), &m) in slot.iter_mut().zip(g).zip(mask) {
                        *s += gi * m;
                    }
                }
            }
            Op::SelectRows {
                mask,
                when_set,
                otherwise,
            } => {
                let d = self.value(*when_set).last_dim();
                for (target, pick) in [(*when_set, true), (*otherwise, false)] {
                    if let Some(slot) = self.slot(target) {
                        for ((sr, gr), &m) in slot.chunks_mut(d).zip(g.chunks(d)).zip(mask) {
                            if m == pick {
                                sr.iter_mut().zip(gr).for_each(|(s, gi)| *s += gi);
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(slot) = self.slot(*x) {
                    slot.iter_mut().zip(g).for_each(|(s, gi)| *s += gi);
                }
            }
            Op::Sum(x) => {
                let g0 = g[0];
                if let Some(slot) = self.slot(*x) {
                    slot.iter_mut().for_each(|s| *s += g0);
                }
            }
            Op::CrossEntropy { probs, targets } => {
                let k = self.value(*probs).shape()[1];
                let p = self.value(*probs).data().to_vec();
                let n = targets.len() as f64;
                let g0 = g[0];
                if let Some(slot) = self.slot(*probs) {
                    for (i, &t) in targets.iter().enumerate() {
                        let pi = p[i * k + t];
                        if pi >= LOG_CLAMP {
                            slot[i * k + t] -= g0 / (n * pi);
                        }
                    }
                }
            }
        }
        self.nodes[id].op = op;
    }
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}
