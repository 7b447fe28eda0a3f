//! Define-by-run reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node to the [`Tape`]. Node ids are
//! handed out in creation order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;

use super::tensor::{
    log_softmax_rows, matmul_at_raw, matmul_bt_raw, matmul_raw, softmax_rows, transpose_raw,
    Tensor,
};
use crate::error::{Error, Result};

/// Additive value standing in for minus infinity in attention masks and
/// logit suppression. `exp(-1e9 - max)` underflows to exactly zero.
pub const NEG_LARGE: f64 = -1e9;

/// Layer-norm variance floor (BERT uses the same constant).
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    /// Output of an op none of whose inputs require gradients.
    Constant,
    MatMul(usize, usize),
    /// `a * b^T`
    MatMulBt(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    MaskedFill {
        x: usize,
        mask: Vec<bool>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    Pick {
        x: usize,
        ids: Vec<usize>,
    },
    Sum(usize),
    Mean(usize),
    Clamp {
        x: usize,
        lo: f64,
        hi: f64,
    },
    Minimum(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` did not
    /// influence the loss.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.by_id(var.id)
    }

    pub(crate) fn by_id(&self, id: usize) -> Tensor {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id]),
        }
    }

    /// Moves the gradient out, returning zeros when absent.
    pub(crate) fn take(&mut self, id: usize) -> Tensor {
        self.grads[id]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id]))
    }
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    let cols = *t.shape().last().unwrap_or(&1);
    let rows = if cols == 0 { 0 } else { t.numel() / cols };
    (rows, cols)
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

fn require_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf that gradients flow into.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Records a leaf that is treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Tensor> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes.is_empty() {
            return Err(Error::shape("backward", "tape is empty"));
        }
        let loss_shape = nodes[loss.id].value.shape();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {loss_shape:?}"),
            ));
        }
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(loss_shape, 1.0));

        let accumulate = |grads: &mut Vec<Option<Tensor>>, id: usize, g: Tensor| {
            if !nodes[id].requires_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            // Leaves keep their gradient; everything else is consumed.
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let gd = g.data();
            let out = &node.value;
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k) = rows_cols(av);
                    let n = rows_cols(bv).1;
                    if nodes[*a].requires_grad {
                        let da = matmul_bt_raw(gd, bv.data(), m, n, k);
                        accumulate(&mut grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                    }
                    if nodes[*b].requires_grad {
                        let db = matmul_at_raw(av.data(), gd, m, k, n);
                        accumulate(&mut grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                    }
                }
                Op::MatMulBt(a, b) => {
                    // out = a (m x k) * b^T, b is n x k
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k) = rows_cols(av);
                    let n = rows_cols(bv).0;
                    if nodes[*a].requires_grad {
                        let da = matmul_raw(gd, bv.data(), m, n, k);
                        accumulate(&mut grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                    }
                    if nodes[*b].requires_grad {
                        let db = matmul_at_raw(gd, av.data(), m, n, k);
                        accumulate(&mut grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = rows_cols(out);
                    let da = transpose_raw(gd, r, c);
                    accumulate(
                        &mut grads,
                        *a,
                        Tensor::from_parts(nodes[*a].value.shape().to_vec(), da),
                    );
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    if nodes[*a].requires_grad {
                        let da = gd.iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                        accumulate(&mut grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                    }
                    if nodes[*b].requires_grad {
                        let db = gd.iter().zip(av.data()).map(|(g, a)| g * a).collect();
                        accumulate(&mut grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                    }
                }
                Op::AddRow(a, row) => {
                    if nodes[*row].requires_grad {
                        let (_, c) = rows_cols(out);
                        let mut dr = vec![0.0; c];
                        for chunk in gd.chunks(c) {
                            for (d, v) in dr.iter_mut().zip(chunk) {
                                *d += v;
                            }
                        }
                        accumulate(
                            &mut grads,
                            *row,
                            Tensor::from_parts(nodes[*row].value.shape().to_vec(), dr),
                        );
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|v| v * s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Exp(a) => {
                    let da = gd.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads, *a, Tensor::from_parts(out.shape().to_vec(), da));
                }
                Op::Log(a) => {
                    let x = &nodes[*a].value;
                    let da = gd.iter().zip(x.data()).map(|(g, x)| g / x).collect();
                    accumulate(&mut grads, *a, Tensor::from_parts(out.shape().to_vec(), da));
                }
                Op::Relu(a) => {
                    let x = &nodes[*a].value;
                    let da = gd
                        .iter()
                        .zip(x.data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::from_parts(out.shape().to_vec(), da));
                }
                Op::Softmax(a) => {
                    let (_, c) = rows_cols(out);
                    let mut da = vec![0.0; out.numel()];
                    for ((dx, dy), y) in da.chunks_mut(c).zip(gd.chunks(c)).zip(out.data().chunks(c))
                    {
                        let dot: f64 = dy.iter().zip(y).map(|(a, b)| a * b).sum();
                        for i in 0..c {
                            dx[i] = y[i] * (dy[i] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_parts(out.shape().to_vec(), da));
                }
                Op::LogSoftmax(a) => {
                    let (_, c) = rows_cols(out);
                    let mut da = vec![0.0; out.numel()];
                    for ((dx, dy), y) in da.chunks_mut(c).zip(gd.chunks(c)).zip(out.data().chunks(c))
                    {
                        let total: f64 = dy.iter().sum();
                        for i in 0..c {
                            dx[i] = dy[i] - y[i].exp() * total;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_parts(out.shape().to_vec(), da));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (_, c) = rows_cols(out);
                    let gv = nodes[*gain].value.data();
                    if nodes[*gain].requires_grad || nodes[*bias].requires_grad {
                        let mut dg = vec![0.0; c];
                        let mut db = vec![0.0; c];
                        for (dy, xh) in gd.chunks(c).zip(xhat.chunks(c)) {
                            for i in 0..c {
                                dg[i] += dy[i] * xh[i];
                                db[i] += dy[i];
                            }
                        }
                        accumulate(&mut grads, *gain, Tensor::from_parts(vec![c], dg));
                        accumulate(&mut grads, *bias, Tensor::from_parts(vec![c], db));
                    }
                    if nodes[*x].requires_grad {
                        let mut dx = vec![0.0; out.numel()];
                        let nf = c as f64;
                        for (r, ((dxr, dy), xh)) in dx
                            .chunks_mut(c)
                            .zip(gd.chunks(c))
                            .zip(xhat.chunks(c))
                            .enumerate()
                        {
                            let dxhat: Vec<f64> = (0..c).map(|i| dy[i] * gv[i]).collect();
                            let sum: f64 = dxhat.iter().sum();
                            let dot: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                            for i in 0..c {
                                dxr[i] = rstd[r] / nf * (nf * dxhat[i] - sum - xh[i] * dot);
                            }
                        }
                        accumulate(&mut grads, *x, Tensor::from_parts(out.shape().to_vec(), dx));
                    }
                }
                Op::Embedding { table, ids } => {
                    let tv = &nodes[*table].value;
                    let (_, d) = rows_cols(tv);
                    let mut dt = vec![0.0; tv.numel()];
                    for (row, &id) in gd.chunks(d).zip(ids) {
                        for (t, v) in dt[id * d..(id + 1) * d].iter_mut().zip(row) {
                            *t += v;
                        }
                    }
                    accumulate(&mut grads, *table, Tensor::from_parts(tv.shape().to_vec(), dt));
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = rows_cols(out);
                    let mut offset = 0;
                    for &p in parts {
                        let w = rows_cols(&nodes[p].value).1;
                        if nodes[p].requires_grad {
                            let mut dp = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                            }
                            accumulate(&mut grads, p, Tensor::from_parts(vec![rows, w], dp));
                        }
                        offset += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = &nodes[*x].value;
                    let (rows, total) = rows_cols(xv);
                    let w = rows_cols(out).1;
                    let mut dx = vec![0.0; xv.numel()];
                    for r in 0..rows {
                        dx[r * total + start..r * total + start + w]
                            .copy_from_slice(&gd[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                Op::MaskedFill { x, mask } => {
                    let dx = gd
                        .iter()
                        .zip(mask)
                        .map(|(g, &m)| if m { 0.0 } else { *g })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_parts(out.shape().to_vec(), dx));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let lv = &nodes[*logits].value;
                    let (_, v) = rows_cols(lv);
                    let scale = gd[0] / (*count).max(1) as f64;
                    let mut dl = vec![0.0; lv.numel()];
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            for i in 0..v {
                                dl[r * v + i] = probs[r * v + i] * scale;
                            }
                            dl[r * v + t] -= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, Tensor::from_parts(lv.shape().to_vec(), dl));
                }
                Op::Pick { x, ids } => {
                    let xv = &nodes[*x].value;
                    let (_, c) = rows_cols(xv);
                    let mut dx = vec![0.0; xv.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        dx[r * c + id] = gd[r];
                    }
                    accumulate(&mut grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                Op::Sum(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, gd[0]));
                }
                Op::Mean(a) => {
                    let av = &nodes[*a].value;
                    let n = av.numel().max(1) as f64;
                    accumulate(&mut grads, *a, Tensor::full(av.shape(), gd[0] / n));
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &nodes[*x].value;
                    let dx = gd
                        .iter()
                        .zip(xv.data())
                        .map(|(g, &v)| if v < *lo || v > *hi { 0.0 } else { *g })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                Op::Minimum(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let mut da = vec![0.0; gd.len()];
                    let mut db = vec![0.0; gd.len()];
                    for i in 0..gd.len() {
                        // ties route to the first operand
                        if av[i] <= bv[i] {
                            da[i] = gd[i];
                        } else {
                            db[i] = gd[i];
                        }
                    }
                    let shape = out.shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::from_parts(shape.clone(), da));
                    accumulate(&mut grads, *b, Tensor::from_parts(shape, db));
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id).shape().to_vec()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> f64 {
        self.tape.value_of(self.id).item()
    }

    fn unary(
        self,
        f: impl FnOnce(&Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var<'t>> {
        let (value, op) = {
            let v = self.tape.value_of(self.id);
            f(&v)?
        };
        Ok(self.tape.push(value, op, &[self.id]))
    }

    fn binary(
        self,
        other: Var<'t>,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var<'t>> {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        let (value, op) = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            f(&a, &b)?
        };
        Ok(self.tape.push(value, op, &[self.id, other.id]))
    }

    /// Matrix product `self (m x k) * other (k x n)`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (ia, ib) = (self.id, other.id);
        self.binary(other, |a, b| {
            let (m, k) = require_rank2("matmul", a)?;
            let (k2, n) = require_rank2("matmul", b)?;
            if k != k2 {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} x {:?}", a.shape(), b.shape()),
                ));
            }
            let data = matmul_raw(a.data(), b.data(), m, k, n);
            Ok((Tensor::from_parts(vec![m, n], data), Op::MatMul(ia, ib)))
        })
    }

    /// `self (m x k) * other^T` where `other` is `n x k`.
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>> {
        let (ia, ib) = (self.id, other.id);
        self.binary(other, |a, b| {
            let (m, k) = require_rank2("matmul_t", a)?;
            let (n, k2) = require_rank2("matmul_t", b)?;
            if k != k2 {
                return Err(Error::shape(
                    "matmul_t",
                    format!("{:?} x {:?}^T", a.shape(), b.shape()),
                ));
            }
            let data = matmul_bt_raw(a.data(), b.data(), m, k, n);
            Ok((Tensor::from_parts(vec![m, n], data), Op::MatMulBt(ia, ib)))
        })
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| {
            let (r, c) = require_rank2("transpose", a)?;
            let data = transpose_raw(a.data(), r, c);
            Ok((Tensor::from_parts(vec![c, r], data), Op::Transpose(ia)))
        })
    }

    fn zip_same(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.binary(other, |a, b| {
            require_same(name, a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok((Tensor::from_parts(a.shape().to_vec(), data), op))
        })
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Add(self.id, other.id);
        self.zip_same(other, "add", op, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Sub(self.id, other.id);
        self.zip_same(other, "sub", op, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Mul(self.id, other.id);
        self.zip_same(other, "mul", op, |a, b| a * b)
    }

    /// Elementwise minimum.
    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Minimum(self.id, other.id);
        self.zip_same(other, "minimum", op, f64::min)
    }

    /// Adds a row vector of length `cols` to every row of a matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (ia, ib) = (self.id, row.id);
        self.binary(row, |a, b| {
            let (_, c) = require_rank2("add_row", a)?;
            if b.shape() != [c] {
                return Err(Error::shape(
                    "add_row",
                    format!("matrix {:?} with row {:?}", a.shape(), b.shape()),
                ));
            }
            let mut data = a.data().to_vec();
            for chunk in data.chunks_mut(c) {
                for (x, y) in chunk.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            Ok((Tensor::from_parts(a.shape().to_vec(), data), Op::AddRow(ia, ib)))
        })
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| Ok((a.map(|v| v * s), Op::Scale(ia, s))))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| Ok((a.map(|v| v + s), Op::AddScalar(ia))))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| Ok((a.map(f64::exp), Op::Exp(ia))))
    }

    pub fn ln(self) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| Ok((a.map(f64::ln), Op::Log(ia))))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| Ok((a.map(|v| v.max(0.0)), Op::Relu(ia))))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero wherever the input lies
    /// strictly outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| {
            Ok((
                a.map(|v| v.clamp(lo, hi)),
                Op::Clamp { x: ia, lo, hi },
            ))
        })
    }

    /// Softmax over the last dimension.
    pub fn softmax(self) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| {
            if a.rank() == 0 {
                return Err(Error::shape("softmax", "scalar input"));
            }
            let (_, c) = rows_cols(a);
            Ok((
                Tensor::from_parts(a.shape().to_vec(), softmax_rows(a.data(), c)),
                Op::Softmax(ia),
            ))
        })
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(self) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| {
            if a.rank() == 0 {
                return Err(Error::shape("log_softmax", "scalar input"));
            }
            let (_, c) = rows_cols(a);
            Ok((
                Tensor::from_parts(a.shape().to_vec(), log_softmax_rows(a.data(), c)),
                Op::LogSoftmax(ia),
            ))
        })
    }

    /// Layer normalization over the last dimension with population variance,
    /// followed by a learnable per-feature gain and bias.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (ix, ig, ib) = (self.id, gain.id, bias.id);
        let (value, op) = {
            let x = self.tape.value_of(ix);
            let g = self.tape.value_of(ig);
            let b = self.tape.value_of(ib);
            if x.rank() == 0 {
                return Err(Error::shape("layer_norm", "scalar input"));
            }
            let (rows, c) = rows_cols(&x);
            if g.shape() != [c] || b.shape() != [c] {
                return Err(Error::shape(
                    "layer_norm",
                    format!(
                        "input {:?}, gain {:?}, bias {:?}",
                        x.shape(),
                        g.shape(),
                        b.shape()
                    ),
                ));
            }
            let mut xhat = vec![0.0; x.numel()];
            let mut rstd = vec![0.0; rows];
            let mut out = vec![0.0; x.numel()];
            for r in 0..rows {
                let row = &x.data()[r * c..(r + 1) * c];
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                rstd[r] = rs;
                for i in 0..c {
                    let h = (row[i] - mean) * rs;
                    xhat[r * c + i] = h;
                    out[r * c + i] = h * g.data()[i] + b.data()[i];
                }
            }
            (
                Tensor::from_parts(x.shape().to_vec(), out),
                Op::LayerNorm {
                    x: ix,
                    gain: ig,
                    bias: ib,
                    xhat,
                    rstd,
                },
            )
        };
        Ok(self.tape.push(value, op, &[ix, ig, ib]))
    }

    /// Gathers rows of an embedding table (`self`, `V x d`) by id.
    pub fn embedding(self, ids: &[usize]) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|t| {
            let (v, d) = require_rank2("embedding", t)?;
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= v {
                    return Err(Error::shape(
                        "embedding",
                        format!("id {id} out of range for table {:?}", t.shape()),
                    ));
                }
                data.extend_from_slice(t.row(id));
            }
            Ok((
                Tensor::from_parts(vec![ids.len(), d], data),
                Op::Embedding {
                    table: ia,
                    ids: ids.to_vec(),
                },
            ))
        })
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(self, start: usize, width: usize) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| {
            let (r, c) = require_rank2("slice_cols", a)?;
            if start + width > c {
                return Err(Error::shape(
                    "slice_cols",
                    format!("columns {start}..{} of {:?}", start + width, a.shape()),
                ));
            }
            let mut data = Vec::with_capacity(r * width);
            for row in 0..r {
                data.extend_from_slice(&a.data()[row * c + start..row * c + start + width]);
            }
            Ok((
                Tensor::from_parts(vec![r, width], data),
                Op::SliceCols { x: ia, start },
            ))
        })
    }

    /// Replaces entries where `mask` is true by `value`; no gradient flows
    /// through replaced entries.
    pub fn masked_fill(self, mask: &[bool], value: f64) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| {
            if mask.len() != a.numel() {
                return Err(Error::shape(
                    "masked_fill",
                    format!("mask of {} for {:?}", mask.len(), a.shape()),
                ));
            }
            let data = a
                .data()
                .iter()
                .zip(mask)
                .map(|(&v, &m)| if m { value } else { v })
                .collect();
            Ok((
                Tensor::from_parts(a.shape().to_vec(), data),
                Op::MaskedFill {
                    x: ia,
                    mask: mask.to_vec(),
                },
            ))
        })
    }

    /// Per-row element `self[r, ids[r]]`, as a vector.
    pub fn pick(self, ids: &[usize]) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| {
            let (r, c) = require_rank2("pick", a)?;
            if ids.len() != r || ids.iter().any(|&i| i >= c) {
                return Err(Error::shape(
                    "pick",
                    format!("{} ids into {:?}", ids.len(), a.shape()),
                ));
            }
            let data = ids.iter().enumerate().map(|(row, &i)| a.data()[row * c + i]).collect();
            Ok((
                Tensor::from_parts(vec![r], data),
                Op::Pick {
                    x: ia,
                    ids: ids.to_vec(),
                },
            ))
        })
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `self`. Rows whose target is `None` are ignored.
    pub fn cross_entropy(self, targets: &[Option<usize>]) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| {
            let (r, c) = require_rank2("cross_entropy", a)?;
            if targets.len() != r || targets.iter().flatten().any(|&t| t >= c) {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("{} targets for logits {:?}", targets.len(), a.shape()),
                ));
            }
            let logp = log_softmax_rows(a.data(), c);
            let mut total = 0.0;
            let mut count = 0;
            for (row, t) in targets.iter().enumerate() {
                if let Some(t) = t {
                    total -= logp[row * c + t];
                    count += 1;
                }
            }
            let loss = if count == 0 { 0.0 } else { total / count as f64 };
            let probs = logp.iter().map(|v| v.exp()).collect();
            Ok((
                Tensor::scalar(loss),
                Op::CrossEntropy {
                    logits: ia,
                    targets: targets.to_vec(),
                    probs,
                    count,
                },
            ))
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| Ok((Tensor::scalar(a.data().iter().sum()), Op::Sum(ia))))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(self) -> Result<Var<'t>> {
        let ia = self.id;
        self.unary(|a| {
            if a.numel() == 0 {
                return Err(Error::shape("mean", "empty input"));
            }
            let m = a.data().iter().sum::<f64>() / a.numel() as f64;
            Ok((Tensor::scalar(m), Op::Mean(ia)))
        })
    }
}

/// Concatenates matrices with equal row counts side by side.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let tape = first.tape;
    let value = {
        let vals: Vec<_> = parts.iter().map(|p| tape.value_of(p.id)).collect();
        let mut dims = Vec::with_capacity(vals.len());
        for v in &vals {
            dims.push(require_rank2("concat", v)?);
        }
        let rows = dims[0].0;
        if dims.iter().any(|d| d.0 != rows) {
            let shapes: Vec<_> = vals.iter().map(|v| v.shape().to_vec()).collect();
            return Err(Error::shape("concat", format!("row counts differ: {shapes:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row(r));
            }
        }
        Tensor::from_parts(vec![rows, total], data)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(tape.push(value, Op::ConcatCols(ids.clone()), &ids))
}
