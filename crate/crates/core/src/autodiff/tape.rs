//! Reverse-mode differentiation over batched dense tensors.
//!
//! Every operation appends a node to the [`Tape`] and returns a [`Var`]
//! handle. Nodes are stored in creation order, which is already a
//! topological order, so [`Tape::backward`] is a single reverse sweep.

use super::gemm::gemm;
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is expanded over the left one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    /// Identical shapes.
    Full,
    /// Right operand has one value per trailing-dim column, repeated over rows.
    Row,
    /// Right operand has one value per row (trailing dim 1).
    Col,
    /// Right operand is a single value.
    Scalar,
}

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var, Broadcast),
    /// `[.., m, k] x [k, n]`: leading dims of the left operand are flattened.
    MatMul(Var, Var),
    /// `[b, m, k] x [b, k, n]`.
    BatchMatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    LeakyRelu(Var, f64),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Transpose(Var),
    Reshape(Var),
    Gather(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of primitive operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the output w.r.t. `var`, or `None` when `var` does not
    /// require grad or the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient as an owned vector, zero-filled when absent.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// `(outer, len, inner)` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_mode(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    let b_numel: usize = b.iter().product();
    let cols = a.last().copied().unwrap_or(1);
    if a == b {
        Some(Broadcast::Full)
    } else if b_numel == 1 {
        Some(Broadcast::Scalar)
    } else if b.last() == Some(&cols) && b_numel == cols {
        Some(Broadcast::Row)
    } else if a.len() == b.len()
        && b.last() == Some(&1)
        && a[..a.len() - 1] == b[..b.len() - 1]
    {
        Some(Broadcast::Col)
    } else {
        None
    }
}

#[inline]
fn rhs_index(mode: Broadcast, i: usize, cols: usize) -> usize {
    match mode {
        Broadcast::Full => i,
        Broadcast::Row => i % cols,
        Broadcast::Col => i / cols,
        Broadcast::Scalar => 0,
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
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

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf (inputs, masks, detached statistics).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.consumed = false;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if let Some(pos) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite {
                op: name,
                index: pos,
                value: value.data()[pos],
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.consumed = false;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, kind: BinaryKind, name: &'static str, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mode = broadcast_mode(av.shape(), bv.shape()).ok_or_else(|| AutodiffError::Shape {
            op: name,
            detail: format!("{:?} vs {:?}", av.shape(), bv.shape()),
        })?;
        let cols = av.last_dim();
        let (ad, bd) = (av.data(), bv.data());
        let out: Vec<f64> = match kind {
            BinaryKind::Add => (0..ad.len()).map(|i| ad[i] + bd[rhs_index(mode, i, cols)]).collect(),
            BinaryKind::Sub => (0..ad.len()).map(|i| ad[i] - bd[rhs_index(mode, i, cols)]).collect(),
            BinaryKind::Mul => (0..ad.len()).map(|i| ad[i] * bd[rhs_index(mode, i, cols)]).collect(),
            BinaryKind::Div => (0..ad.len()).map(|i| ad[i] / bd[rhs_index(mode, i, cols)]).collect(),
        };
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.push(name, value, Op::Binary(kind, a, b, mode), &[a, b])
    }

    /// Elementwise `a + b`; `b` may broadcast as a row, column, or scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryKind::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryKind::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(BinaryKind::Div, "div", a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (ash, bsh) = (av.shape(), bv.shape());
        let mismatch = || AutodiffError::Shape {
            op: "matmul",
            detail: format!("{:?} x {:?}", ash, bsh),
        };
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(mismatch());
        }
        let k = ash[ash.len() - 1];
        if bsh.len() == 2 {
            if bsh[0] != k {
                return Err(mismatch());
            }
            let n = bsh[1];
            let m = av.numel() / k.max(1);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
            let mut shape = ash.to_vec();
            *shape.last_mut().unwrap() = n;
            let value = Tensor::new(shape, out)?;
            return self.push("matmul", value, Op::MatMul(a, b), &[a, b]);
        }
        if ash.len() != 3 || bsh.len() != 3 || ash[0] != bsh[0] || bsh[1] != k {
            return Err(mismatch());
        }
        let (batch, m, n) = (ash[0], ash[1], bsh[2]);
        let mut out = vec![0.0; batch * m * n];
        for s in 0..batch {
            gemm(
                m,
                k,
                n,
                &av.data()[s * m * k..(s + 1) * m * k],
                false,
                &bv.data()[s * k * n..(s + 1) * k * n],
                false,
                &mut out[s * m * n..(s + 1) * m * n],
                false,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        self.push("matmul", value, Op::BatchMatMul(a, b), &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AutodiffError> {
        let av = &self.nodes[a.0].value;
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect())?;
        self.push(name, value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        self.unary("scale", a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary("add_scalar", a, Op::AddScalar(a), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("log", a, Op::Log(a), f64::ln)
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Result<Var, AutodiffError> {
        self.unary("powf", a, Op::Powf(a, exponent), |x| x.powf(exponent))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, AutodiffError> {
        self.unary("leaky_relu", a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    fn check_axis(&self, name: &'static str, a: Var, axis: usize) -> Result<(), AutodiffError> {
        let rank = self.shape(a).len();
        if axis >= rank {
            return Err(AutodiffError::Shape {
                op: name,
                detail: format!("axis {} out of range for {:?}", axis, self.shape(a)),
            });
        }
        Ok(())
    }

    fn reduce_axis(&self, a: Var, axis: usize, mean: bool) -> Tensor {
        let av = &self.nodes[a.0].value;
        let (outer, len, inner) = split_axis(av.shape(), axis);
        let data = av.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &data[(o * len + l) * inner..(o * len + l + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        if mean {
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut shape = av.shape().to_vec();
        shape[axis] = 1;
        Tensor::new(shape, out).expect("reduction shape")
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.check_axis("sum_axis", a, axis)?;
        let value = self.reduce_axis(a, axis, false);
        self.push("sum_axis", value, Op::SumAxis(a, axis), &[a])
    }

    /// Mean along `axis`, keeping it with size 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        self.check_axis("mean_axis", a, axis)?;
        let value = self.reduce_axis(a, axis, true);
        self.push("mean_axis", value, Op::MeanAxis(a, axis), &[a])
    }

    /// Sum along the trailing axis.
    pub fn sum_last(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let axis = self.shape(a).len().saturating_sub(1);
        self.sum_axis(a, axis)
    }

    pub fn mean_last(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let axis = self.shape(a).len().saturating_sub(1);
        self.mean_axis(a, axis)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push("mean_all", Tensor::scalar(s), Op::MeanAll(a), &[a])
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or_else(|| AutodiffError::Shape {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::Shape {
                op: "concat",
                detail: format!("axis {} out of range for {:?}", axis, base),
            });
        }
        let mut total = 0;
        for p in parts {
            let sh = self.shape(*p);
            let compatible = sh.len() == base.len()
                && sh.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AutodiffError::Shape {
                    op: "concat",
                    detail: format!("{:?} vs {:?} along axis {}", base, sh, axis),
                });
            }
            total += sh[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push("concat", value, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        self.check_axis("slice", a, axis)?;
        let av = self.value(a);
        let (outer, full, inner) = split_axis(av.shape(), axis);
        if start + len > full {
            return Err(AutodiffError::Shape {
                op: "slice",
                detail: format!("range {}..{} exceeds axis {} of {:?}", start, start + len, axis, av.shape()),
            });
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&av.data()[base..base + len * inner]);
        }
        let mut shape = av.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        self.push("slice", value, Op::Slice(a, axis, start), &[a])
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let sh = av.shape();
        if sh.len() < 2 {
            return Err(AutodiffError::Shape {
                op: "transpose",
                detail: format!("needs rank >= 2, got {:?}", sh),
            });
        }
        let (r, c) = (sh[sh.len() - 2], sh[sh.len() - 1]);
        let batch = av.numel() / (r * c).max(1);
        let mut out = vec![0.0; av.numel()];
        for s in 0..batch {
            let src = &av.data()[s * r * c..(s + 1) * r * c];
            let dst = &mut out[s * r * c..(s + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut shape = sh.to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let value = Tensor::new(shape, out)?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Rows of a `[vocab, dim]` table selected by `ids`, giving `[ids.len(), dim]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(AutodiffError::Shape {
                op: "gather_rows",
                detail: format!("table must be 2-D, got {:?}", tv.shape()),
            });
        }
        let (rows, dim) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(AutodiffError::IndexOutOfRange { op: "gather_rows", index: id, len: rows });
            }
            out.extend_from_slice(&tv.data()[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::new(vec![ids.len(), dim], out)?;
        self.push("gather_rows", value, Op::Gather(table, ids.to_vec()), &[table])
    }

    /// Gradients of the scalar `output` w.r.t. every node that requires grad.
    ///
    /// A second call without recording new operations is an error.
    pub fn backward(&mut self, output: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        let out_value = self.value(output);
        if !out_value.is_scalar() {
            return Err(AutodiffError::NonScalarOutput {
                shape: out_value.shape().to_vec(),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[output.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b, mode) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let cols = self.value(*a).last_dim();
                if needs(*a) {
                    let ga = accumulate(&mut grads[a.0], ad.len());
                    match kind {
                        BinaryKind::Add | BinaryKind::Sub => {
                            ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
                        }
                        BinaryKind::Mul => {
                            for i in 0..g.len() {
                                ga[i] += g[i] * bd[rhs_index(*mode, i, cols)];
                            }
                        }
                        BinaryKind::Div => {
                            for i in 0..g.len() {
                                ga[i] += g[i] / bd[rhs_index(*mode, i, cols)];
                            }
                        }
                    }
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads[b.0], bd.len());
                    for i in 0..g.len() {
                        let j = rhs_index(*mode, i, cols);
                        gb[j] += match kind {
                            BinaryKind::Add => g[i],
                            BinaryKind::Sub => -g[i],
                            BinaryKind::Mul => g[i] * ad[i],
                            BinaryKind::Div => -g[i] * ad[i] / (bd[j] * bd[j]),
                        };
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.last_dim();
                let n = bv.shape()[1];
                let m = av.numel() / k.max(1);
                if needs(*a) {
                    let ga = accumulate(&mut grads[a.0], av.numel());
                    gemm(m, n, k, g, false, bv.data(), true, ga, true);
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads[b.0], bv.numel());
                    gemm(k, m, n, av.data(), true, g, false, gb, true);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                if needs(*a) {
                    let ga = accumulate(&mut grads[a.0], av.numel());
                    for s in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[s * m * n..(s + 1) * m * n],
                            false,
                            &bv.data()[s * k * n..(s + 1) * k * n],
                            true,
                            &mut ga[s * m * k..(s + 1) * m * k],
                            true,
                        );
                    }
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads[b.0], bv.numel());
                    for s in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &av.data()[s * m * k..(s + 1) * m * k],
                            true,
                            &g[s * m * n..(s + 1) * m * n],
                            false,
                            &mut gb[s * k * n..(s + 1) * k * n],
                            true,
                        );
                    }
                }
            }
            Op::Scale(a, f) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi * f);
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let ga = accumulate(&mut grads[a.0], g.len());
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            }
            Op::Exp(a) => {
                let out = node.value.data();
                let ga = accumulate(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i];
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let ga = accumulate(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] / x[i];
                }
            }
            Op::Powf(a, p) => {
                let x = self.value(*a).data();
                let ga = accumulate(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * p * x[i].powf(p - 1.0);
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                let ga = accumulate(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    ga[i] += if x[i] > 0.0 { g[i] } else { g[i] * slope };
                }
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (outer, len, inner) = split_axis(self.value(*a).shape(), *axis);
                let factor = if matches!(node.op, Op::MeanAxis(..)) { 1.0 / len as f64 } else { 1.0 };
                let ga = accumulate(&mut grads[a.0], outer * len * inner);
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let dst = &mut ga[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s * factor;
                        }
                    }
                }
            }
            Op::SumAll(a) | Op::MeanAll(a) => {
                let n = numel(*a);
                let factor = if matches!(node.op, Op::MeanAll(_)) { g[0] / n as f64 } else { g[0] };
                let ga = accumulate(&mut grads[a.0], n);
                ga.iter_mut().for_each(|x| *x += factor);
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let plen = self.value(*p).shape()[*axis];
                    if needs(*p) {
                        let gp = accumulate(&mut grads[p.0], outer * plen * inner);
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + plen) * inner];
                            let dst = &mut gp[o * plen * inner..(o + 1) * plen * inner];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += plen;
                }
            }
            Op::Slice(a, axis, start) => {
                let (outer, full, inner) = split_axis(self.value(*a).shape(), *axis);
                let len = node.value.shape()[*axis];
                let ga = accumulate(&mut grads[a.0], outer * full * inner);
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    let dst = &mut ga[base..base + len * inner];
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            Op::Transpose(a) => {
                let sh = self.value(*a).shape();
                let (r, c) = (sh[sh.len() - 2], sh[sh.len() - 1]);
                let batch = g.len() / (r * c).max(1);
                let ga = accumulate(&mut grads[a.0], g.len());
                for s in 0..batch {
                    for i in 0..r {
                        for j in 0..c {
                            ga[s * r * c + i * c + j] += g[s * r * c + j * r + i];
                        }
                    }
                }
            }
            Op::Gather(table, ids) => {
                let dim = self.value(*table).shape()[1];
                let gt = accumulate(&mut grads[table.0], numel(*table));
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id * dim..(id + 1) * dim];
                    let src = &g[row * dim..(row + 1) * dim];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
        }
    }
}
