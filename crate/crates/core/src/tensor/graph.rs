use std::cell::{Ref, RefCell};

use super::kernels::{self, Conv1dDims, LstmDims, LstmTrace};
use super::{rows_of, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Square,
    Softplus,
    Sigmoid,
    Tanh,
    Relu,
}

enum Op<T> {
    Leaf,
    Binary(BinaryKind, usize, usize),
    Unary(UnaryKind, usize),
    Scale(usize, T),
    AddScalar(usize),
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    AddRow(usize, usize),
    Sum(usize),
    Mean(usize),
    MeanAxis { src: usize, axis: usize },
    Softmax(usize),
    Conv1d { x: usize, w: usize, dims: Conv1dDims },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<T>, rstd: Vec<T> },
    Reshape(usize),
    Permute(usize, Vec<usize>),
    SliceAxis0 { src: usize, start: usize },
    SliceLast { src: usize, start: usize },
    ConcatLast(Vec<usize>),
    Lstm { xw: usize, wh: usize, dims: LstmDims, trace: LstmTrace<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// Leaf bound with `requires_grad`.
    requires_grad: bool,
    /// Some leaf upstream requires a gradient.
    needs_grad: bool,
}

/// Gradient tape. Nodes are appended in execution order, so parents always
/// precede children and one reverse sweep visits every op exactly once.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    strict: bool,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

/// Gradient buffers produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Vec<T>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// Tape that asserts (in debug builds) that every op output is finite.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            strict: true,
        }
    }

    /// Tape without the finite-value assertion; the caller checks the loss.
    pub fn lenient() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            strict: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient (inputs, targets).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            needs_grad: requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var<'_, T> {
        if self.strict {
            debug_assert!(value.all_finite(), "non-finite value produced on the tape");
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad: false,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            propagate(&nodes, id, &g, &mut grads);
        }

        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![T::zero(); node.value.numel()]);
            } else if !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adds into the gradient buffer of `id`, allocating it on first use.
fn acc<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: usize, f: impl FnOnce(&mut [T])) {
    if !nodes[id].needs_grad {
        return;
    }
    let buf = grads[id].get_or_insert_with(|| vec![T::zero(); nodes[id].value.numel()]);
    f(buf);
}

fn propagate<T: Real>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::Binary(kind, a, b) => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            let bcast_a = av.len() == 1 && g.len() != 1;
            let bcast_b = bv.len() == 1 && g.len() != 1;
            let at = |i: usize| if bcast_a { av[0] } else { av[i] };
            let bt = |i: usize| if bcast_b { bv[0] } else { bv[i] };
            let da: Vec<T> = match kind {
                BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                BinaryKind::Mul => g.iter().enumerate().map(|(i, &gi)| gi * bt(i)).collect(),
            };
            let db: Vec<T> = match kind {
                BinaryKind::Add => g.to_vec(),
                BinaryKind::Sub => g.iter().map(|&gi| -gi).collect(),
                BinaryKind::Mul => g.iter().enumerate().map(|(i, &gi)| gi * at(i)).collect(),
            };
            acc(nodes, grads, a, |buf| reduce_into(buf, &da));
            acc(nodes, grads, b, |buf| reduce_into(buf, &db));
        }
        &Op::Unary(kind, a) => {
            let x = nodes[a].value.data();
            let y = out.data();
            acc(nodes, grads, a, |buf| {
                for i in 0..buf.len() {
                    let d = match kind {
                        UnaryKind::Square => T::from_f64(2.0) * x[i],
                        UnaryKind::Softplus => kernels::sigmoid(x[i]),
                        UnaryKind::Sigmoid => y[i] * (T::one() - y[i]),
                        UnaryKind::Tanh => T::one() - y[i] * y[i],
                        UnaryKind::Relu => {
                            if x[i] > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                    };
                    buf[i] += g[i] * d;
                }
            });
        }
        &Op::Scale(a, c) => acc(nodes, grads, a, |buf| {
            for (b, &gi) in buf.iter_mut().zip(g) {
                *b += gi * c;
            }
        }),
        &Op::AddScalar(a) | &Op::Reshape(a) => acc(nodes, grads, a, |buf| {
            for (b, &gi) in buf.iter_mut().zip(g) {
                *b += gi;
            }
        }),
        &Op::MatMul(a, b) => {
            let (m, k) = (nodes[a].value.shape()[0], nodes[a].value.shape()[1]);
            let n = nodes[b].value.shape()[1];
            let bv = nodes[b].value.data();
            let av = nodes[a].value.data();
            acc(nodes, grads, a, |buf| kernels::matmul_a_bt_acc(g, bv, buf, m, n, k));
            acc(nodes, grads, b, |buf| kernels::matmul_at_b_acc(av, g, buf, m, k, n));
        }
        &Op::BatchMatMul(a, b) => {
            let s = nodes[a].value.shape();
            let (bt, m, k) = (s[0], s[1], s[2]);
            let n = nodes[b].value.shape()[2];
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            acc(nodes, grads, a, |buf| {
                for i in 0..bt {
                    kernels::matmul_a_bt_acc(
                        &g[i * m * n..(i + 1) * m * n],
                        &bv[i * k * n..(i + 1) * k * n],
                        &mut buf[i * m * k..(i + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            });
            acc(nodes, grads, b, |buf| {
                for i in 0..bt {
                    kernels::matmul_at_b_acc(
                        &av[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        &mut buf[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            });
        }
        &Op::AddRow(a, bias) => {
            acc(nodes, grads, a, |buf| {
                for (b, &gi) in buf.iter_mut().zip(g) {
                    *b += gi;
                }
            });
            let n = nodes[bias].value.numel();
            acc(nodes, grads, bias, |buf| {
                for row in g.chunks(n) {
                    for (b, &gi) in buf.iter_mut().zip(row) {
                        *b += gi;
                    }
                }
            });
        }
        &Op::Sum(a) => acc(nodes, grads, a, |buf| {
            for b in buf.iter_mut() {
                *b += g[0];
            }
        }),
        &Op::Mean(a) => {
            let scale = g[0] / T::from_f64(nodes[a].value.numel() as f64);
            acc(nodes, grads, a, |buf| {
                for b in buf.iter_mut() {
                    *b += scale;
                }
            });
        }
        &Op::MeanAxis { src, axis } => {
            let shape = nodes[src].value.shape();
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let inv = T::one() / T::from_f64(len as f64);
            acc(nodes, grads, src, |buf| {
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            buf[(o * len + l) * inner + i] += g[o * inner + i] * inv;
                        }
                    }
                }
            });
        }
        &Op::Softmax(a) => {
            let n = *out.shape().last().unwrap_or(&1);
            let y = out.data();
            acc(nodes, grads, a, |buf| {
                for r in 0..y.len() / n {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let dot: T = ys.iter().zip(gs).map(|(&yi, &gi)| yi * gi).sum();
                    for j in 0..n {
                        buf[r * n + j] += ys[j] * (gs[j] - dot);
                    }
                }
            });
        }
        &Op::Conv1d { x, w, dims } => {
            let xv = nodes[x].value.data();
            let wv = nodes[w].value.data();
            let mut dx = nodes[x].needs_grad.then(|| vec![T::zero(); xv.len()]);
            let mut dw = nodes[w].needs_grad.then(|| vec![T::zero(); wv.len()]);
            kernels::conv1d_backward(xv, wv, g, &dims, dx.as_deref_mut(), dw.as_deref_mut());
            if let Some(dx) = dx {
                acc(nodes, grads, x, |buf| reduce_into(buf, &dx));
            }
            if let Some(dw) = dw {
                acc(nodes, grads, w, |buf| reduce_into(buf, &dw));
            }
        }
        Op::LayerNorm { x, gain, bias, xhat, rstd } => {
            let n = nodes[*gain].value.numel();
            let gv = nodes[*gain].value.data();
            let rows = xhat.len() / n;
            acc(nodes, grads, *x, |buf| {
                let inv_n = T::one() / T::from_f64(n as f64);
                for r in 0..rows {
                    let gs = &g[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for j in 0..n {
                        let d = gs[j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xh[j];
                    }
                    mean_d *= inv_n;
                    mean_dx *= inv_n;
                    for j in 0..n {
                        let d = gs[j] * gv[j];
                        buf[r * n + j] += rstd[r] * (d - mean_d - xh[j] * mean_dx);
                    }
                }
            });
            acc(nodes, grads, *gain, |buf| {
                for r in 0..rows {
                    for j in 0..n {
                        buf[j] += g[r * n + j] * xhat[r * n + j];
                    }
                }
            });
            acc(nodes, grads, *bias, |buf| {
                for r in 0..rows {
                    for j in 0..n {
                        buf[j] += g[r * n + j];
                    }
                }
            });
        }
        Op::Permute(a, perm) => {
            let inv = kernels::inverse_permutation(perm);
            let (_, back) = kernels::permute(g, out.shape(), &inv);
            acc(nodes, grads, *a, |buf| reduce_into(buf, &back));
        }
        &Op::SliceAxis0 { src, start } => {
            let inner: usize = out.shape()[1..].iter().product();
            acc(nodes, grads, src, |buf| {
                for (b, &gi) in buf[start * inner..].iter_mut().zip(g) {
                    *b += gi;
                }
            });
        }
        &Op::SliceLast { src, start } => {
            let (rows, width) = rows_of(out.shape());
            let src_n = *nodes[src].value.shape().last().unwrap();
            acc(nodes, grads, src, |buf| {
                for r in 0..rows {
                    for j in 0..width {
                        buf[r * src_n + start + j] += g[r * width + j];
                    }
                }
            });
        }
        Op::Lstm { xw, wh, dims, trace } => {
            let whv = nodes[*wh].value.data();
            let mut dxw = nodes[*xw].needs_grad.then(|| vec![T::zero(); nodes[*xw].value.numel()]);
            let mut dwh = nodes[*wh].needs_grad.then(|| vec![T::zero(); whv.len()]);
            kernels::lstm_backward(trace, whv, *dims, g, dxw.as_deref_mut(), dwh.as_deref_mut());
            if let Some(dxw) = dxw {
                acc(nodes, grads, *xw, |buf| reduce_into(buf, &dxw));
            }
            if let Some(dwh) = dwh {
                acc(nodes, grads, *wh, |buf| reduce_into(buf, &dwh));
            }
        }
        Op::ConcatLast(parts) => {
            let (rows, total) = rows_of(out.shape());
            let mut offset = 0;
            for &p in parts {
                let w = *nodes[p].value.shape().last().unwrap();
                acc(nodes, grads, p, |buf| {
                    for r in 0..rows {
                        for j in 0..w {
                            buf[r * w + j] += g[r * total + offset + j];
                        }
                    }
                });
                offset += w;
            }
        }
    }
}

/// `buf += src`, summing `src` down to one value when `buf` is a broadcast scalar.
fn reduce_into<T: Real>(buf: &mut [T], src: &[T]) {
    if buf.len() == src.len() {
        for (b, &s) in buf.iter_mut().zip(src) {
            *b += s;
        }
    } else {
        debug_assert_eq!(buf.len(), 1);
        buf[0] += src.iter().copied().sum::<T>();
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    /// Snapshot of the forward value.
    pub fn value(&self) -> Tensor<T> {
        self.graph.value(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value(self.id).shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.graph.value(self.id).item()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var<'g, T> {
        self.graph.push(value, op, parents)
    }

    fn binary(&self, other: Var<'g, T>, kind: BinaryKind) -> Result<Var<'g, T>> {
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(other.id);
            let (shape, n) = if a.shape() == b.shape() {
                (a.shape().to_vec(), a.numel())
            } else if b.numel() == 1 {
                (a.shape().to_vec(), a.numel())
            } else if a.numel() == 1 {
                (b.shape().to_vec(), b.numel())
            } else {
                return Err(Error::Dimension(format!(
                    "elementwise op on shapes {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            };
            let (ad, bd) = (a.data(), b.data());
            let at = |i: usize| if ad.len() == 1 { ad[0] } else { ad[i] };
            let bt = |i: usize| if bd.len() == 1 { bd[0] } else { bd[i] };
            let data = (0..n)
                .map(|i| match kind {
                    BinaryKind::Add => at(i) + bt(i),
                    BinaryKind::Sub => at(i) - bt(i),
                    BinaryKind::Mul => at(i) * bt(i),
                })
                .collect();
            Tensor { shape, data }
        };
        Ok(self.push(value, Op::Binary(kind, self.id, other.id), &[self.id, other.id]))
    }

    pub fn try_add(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn try_sub(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn try_mul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinaryKind::Mul)
    }

    /// Panicking variants for internal model code where shapes are fixed by construction.
    pub fn add(&self, other: Var<'g, T>) -> Var<'g, T> {
        self.try_add(other).expect("add shape mismatch")
    }

    pub fn sub(&self, other: Var<'g, T>) -> Var<'g, T> {
        self.try_sub(other).expect("sub shape mismatch")
    }

    pub fn mul(&self, other: Var<'g, T>) -> Var<'g, T> {
        self.try_mul(other).expect("mul shape mismatch")
    }

    fn unary(&self, kind: UnaryKind) -> Var<'g, T> {
        let value = {
            let a = self.graph.value(self.id);
            let data = a
                .data()
                .iter()
                .map(|&x| match kind {
                    UnaryKind::Square => x * x,
                    UnaryKind::Softplus => kernels::softplus(x),
                    UnaryKind::Sigmoid => kernels::sigmoid(x),
                    UnaryKind::Tanh => x.tanh(),
                    UnaryKind::Relu => x.max(T::zero()),
                })
                .collect();
            Tensor {
                shape: a.shape().to_vec(),
                data,
            }
        };
        self.push(value, Op::Unary(kind, self.id), &[self.id])
    }

    pub fn square(&self) -> Var<'g, T> {
        self.unary(UnaryKind::Square)
    }

    pub fn softplus(&self) -> Var<'g, T> {
        self.unary(UnaryKind::Softplus)
    }

    pub fn sigmoid(&self) -> Var<'g, T> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn tanh(&self) -> Var<'g, T> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn relu(&self) -> Var<'g, T> {
        self.unary(UnaryKind::Relu)
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: f64) -> Var<'g, T> {
        let c = T::from_f64(c);
        let value = {
            let a = self.graph.value(self.id);
            Tensor {
                shape: a.shape().to_vec(),
                data: a.data().iter().map(|&x| x * c).collect(),
            }
        };
        self.push(value, Op::Scale(self.id, c), &[self.id])
    }

    pub fn add_scalar(&self, c: f64) -> Var<'g, T> {
        let c = T::from_f64(c);
        let value = {
            let a = self.graph.value(self.id);
            Tensor {
                shape: a.shape().to_vec(),
                data: a.data().iter().map(|&x| x + c).collect(),
            }
        };
        self.push(value, Op::AddScalar(self.id), &[self.id])
    }

    /// `[m×k] · [k×n]`.
    pub fn try_matmul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(other.id);
            if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::Dimension(format!(
                    "matmul of {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor {
                shape: vec![m, n],
                data: kernels::matmul(a.data(), b.data(), m, k, n),
            }
        };
        Ok(self.push(value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn matmul(&self, other: Var<'g, T>) -> Var<'g, T> {
        self.try_matmul(other).expect("matmul shape mismatch")
    }

    /// `[b×m×k] · [b×k×n]`.
    pub fn batch_matmul(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(other.id);
            let ok = a.ndim() == 3
                && b.ndim() == 3
                && a.shape()[0] == b.shape()[0]
                && a.shape()[2] == b.shape()[1];
            if !ok {
                return Err(Error::Dimension(format!(
                    "batch matmul of {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (bt, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
            let mut data = vec![T::zero(); bt * m * n];
            for i in 0..bt {
                kernels::matmul_acc(
                    &a.data()[i * m * k..(i + 1) * m * k],
                    &b.data()[i * k * n..(i + 1) * k * n],
                    &mut data[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            Tensor {
                shape: vec![bt, m, n],
                data,
            }
        };
        Ok(self.push(value, Op::BatchMatMul(self.id, other.id), &[self.id, other.id]))
    }

    /// Adds a `[n]` vector to every length-`n` row along the last axis.
    pub fn add_row(&self, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(bias.id);
            let n = *a.shape().last().unwrap_or(&1);
            if b.numel() != n {
                return Err(Error::Dimension(format!(
                    "row bias of {:?} onto {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(n) {
                for (x, &bv) in row.iter_mut().zip(b.data()) {
                    *x += bv;
                }
            }
            Tensor {
                shape: a.shape().to_vec(),
                data,
            }
        };
        Ok(self.push(value, Op::AddRow(self.id, bias.id), &[self.id, bias.id]))
    }

    pub fn sum(&self) -> Var<'g, T> {
        let value = Tensor::scalar(self.graph.value(self.id).data().iter().copied().sum());
        self.push(value, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var<'g, T> {
        let value = {
            let a = self.graph.value(self.id);
            let s: T = a.data().iter().copied().sum();
            Tensor::scalar(s / T::from_f64(a.numel() as f64))
        };
        self.push(value, Op::Mean(self.id), &[self.id])
    }

    /// Mean over one axis, removing it.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<'g, T>> {
        let value = {
            let a = self.graph.value(self.id);
            let shape = a.shape();
            if axis >= shape.len() || shape[axis] == 0 {
                return Err(Error::Dimension(format!("mean over axis {axis} of {shape:?}")));
            }
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut data = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        data[o * inner + i] += a.data()[(o * len + l) * inner + i];
                    }
                }
            }
            let inv = T::one() / T::from_f64(len as f64);
            data.iter_mut().for_each(|v| *v *= inv);
            let mut out_shape = shape.to_vec();
            out_shape.remove(axis);
            Tensor {
                shape: out_shape,
                data,
            }
        };
        Ok(self.push(value, Op::MeanAxis { src: self.id, axis }, &[self.id]))
    }

    /// Softmax along the last axis.
    pub fn softmax(&self) -> Var<'g, T> {
        let value = {
            let a = self.graph.value(self.id);
            let n = *a.shape().last().unwrap_or(&1);
            Tensor {
                shape: a.shape().to_vec(),
                data: kernels::softmax_rows(a.data(), n),
            }
        };
        self.push(value, Op::Softmax(self.id), &[self.id])
    }

    /// Convolution of `[L×Cin]` or `[B×L×Cin]` input with `[K×Cin×Cout]` kernels.
    pub fn conv1d(&self, kernels_: Var<'g, T>, stride: usize, padding: usize) -> Result<Var<'g, T>> {
        let (value, dims) = {
            let x = self.graph.value(self.id);
            let w = self.graph.value(kernels_.id);
            let (batch, len, c_in) = match *x.shape() {
                [l, c] => (1, l, c),
                [b, l, c] => (b, l, c),
                _ => {
                    return Err(Error::Dimension(format!("conv1d input shape {:?}", x.shape())));
                }
            };
            let [k, wc_in, c_out] = *w.shape() else {
                return Err(Error::Dimension(format!("conv1d kernel shape {:?}", w.shape())));
            };
            if wc_in != c_in {
                return Err(Error::Dimension(format!(
                    "conv1d kernel expects {wc_in} input channels, input has {c_in}"
                )));
            }
            if stride == 0 || len + 2 * padding < k {
                return Err(Error::Dimension(format!(
                    "kernel {k} larger than padded input {}",
                    len + 2 * padding
                )));
            }
            let dims = Conv1dDims {
                batch,
                len,
                c_in,
                kernel: k,
                c_out,
                stride,
                padding,
            };
            let data = kernels::conv1d_forward(x.data(), w.data(), &dims);
            let shape = if x.ndim() == 2 {
                vec![dims.out_len(), c_out]
            } else {
                vec![batch, dims.out_len(), c_out]
            };
            (Tensor { shape, data }, dims)
        };
        Ok(self.push(
            value,
            Op::Conv1d {
                x: self.id,
                w: kernels_.id,
                dims,
            },
            &[self.id, kernels_.id],
        ))
    }

    /// Layer normalization over the last axis with affine gain and bias.
    pub fn layer_norm(&self, gain: Var<'g, T>, bias: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        let (value, xhat, rstd) = {
            let x = self.graph.value(self.id);
            let gv = self.graph.value(gain.id);
            let bv = self.graph.value(bias.id);
            let (rows, n) = rows_of(x.shape());
            if n == 0 || gv.numel() != n || bv.numel() != n {
                return Err(Error::Dimension(format!(
                    "layer norm over {:?} with gain {:?}",
                    x.shape(),
                    gv.shape()
                )));
            }
            let eps = T::from_f64(eps);
            let inv_n = T::one() / T::from_f64(n as f64);
            let mut xhat = Vec::with_capacity(x.numel());
            let mut rstd = Vec::with_capacity(rows);
            let mut data = Vec::with_capacity(x.numel());
            for row in x.data().chunks(n) {
                let mean = row.iter().copied().sum::<T>() * inv_n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
                let r = T::one() / (var + eps).sqrt();
                rstd.push(r);
                for (j, &v) in row.iter().enumerate() {
                    let h = (v - mean) * r;
                    xhat.push(h);
                    data.push(h * gv.data()[j] + bv.data()[j]);
                }
            }
            (
                Tensor {
                    shape: x.shape().to_vec(),
                    data,
                },
                xhat,
                rstd,
            )
        };
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
            &[self.id, gain.id, bias.id],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let value = self.graph.value(self.id).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(self.id), &[self.id]))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'g, T>> {
        let value = {
            let a = self.graph.value(self.id);
            let mut sorted = perm.to_vec();
            sorted.sort_unstable();
            if sorted != (0..a.ndim()).collect::<Vec<_>>() {
                return Err(Error::Dimension(format!(
                    "permutation {perm:?} for shape {:?}",
                    a.shape()
                )));
            }
            let (shape, data) = kernels::permute(a.data(), a.shape(), perm);
            Tensor { shape, data }
        };
        Ok(self.push(value, Op::Permute(self.id, perm.to_vec()), &[self.id]))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Var<'g, T>> {
        self.permute(&[1, 0])
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn slice_axis0(&self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let value = {
            let a = self.graph.value(self.id);
            let lead = *a.shape().first().unwrap_or(&0);
            if start + len > lead {
                return Err(Error::Dimension(format!(
                    "slice {start}..{} of leading axis {lead}",
                    start + len
                )));
            }
            let inner: usize = a.shape()[1..].iter().product();
            let mut shape = a.shape().to_vec();
            shape[0] = len;
            Tensor {
                shape,
                data: a.data()[start * inner..(start + len) * inner].to_vec(),
            }
        };
        Ok(self.push(value, Op::SliceAxis0 { src: self.id, start }, &[self.id]))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let value = {
            let a = self.graph.value(self.id);
            let (rows, n) = rows_of(a.shape());
            if start + len > n {
                return Err(Error::Dimension(format!(
                    "slice {start}..{} of last axis {n}",
                    start + len
                )));
            }
            let mut data = Vec::with_capacity(rows * len);
            for row in a.data().chunks(n) {
                data.extend_from_slice(&row[start..start + len]);
            }
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = len;
            Tensor { shape, data }
        };
        Ok(self.push(value, Op::SliceLast { src: self.id, start }, &[self.id]))
    }

    /// Single-layer LSTM from zero state over `self`, the per-step input
    /// projection plus bias `[steps·B × 4H]`, with recurrent weights `wh`
    /// `[H × 4H]`. Gate order i, f, g, o. Returns the final hidden state `[B × H]`.
    pub fn lstm(&self, wh: Var<'g, T>, steps: usize) -> Result<Var<'g, T>> {
        let (value, dims, trace) = {
            let x = self.graph.value(self.id);
            let w = self.graph.value(wh.id);
            let [h, four_h] = *w.shape() else {
                return Err(Error::Dimension(format!("recurrent weights must be 2-D, got {:?}", w.shape())));
            };
            if four_h != 4 * h || h == 0 {
                return Err(Error::Dimension(format!("recurrent weights must be [H × 4H], got {:?}", w.shape())));
            }
            if steps == 0 {
                return Err(Error::Contract("LSTM over an empty sequence".into()));
            }
            let [rows, width] = *x.shape() else {
                return Err(Error::Dimension(format!("LSTM input must be 2-D, got {:?}", x.shape())));
            };
            if width != four_h || rows % steps != 0 {
                return Err(Error::Dimension(format!(
                    "LSTM input {:?} does not split into {steps} steps of width {four_h}",
                    x.shape()
                )));
            }
            let dims = LstmDims {
                steps,
                batch: rows / steps,
                hidden: h,
            };
            let trace = kernels::lstm_forward(x.data(), w.data(), dims);
            let last = trace.hiddens[(steps - 1) * dims.batch * h..].to_vec();
            (
                Tensor {
                    shape: vec![dims.batch, h],
                    data: last,
                },
                dims,
                trace,
            )
        };
        Ok(self.push(
            value,
            Op::Lstm {
                xw: self.id,
                wh: wh.id,
                dims,
                trace,
            },
            &[self.id, wh.id],
        ))
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat_last(parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let graph = first.graph;
        let value = {
            let vals: Vec<_> = parts.iter().map(|p| graph.value(p.id)).collect();
            let lead = &vals[0].shape()[..vals[0].ndim() - 1];
            if vals.iter().any(|v| &v.shape()[..v.ndim() - 1] != lead) {
                return Err(Error::Dimension("concat with mismatched leading dims".into()));
            }
            let rows: usize = lead.iter().product();
            let widths: Vec<usize> = vals.iter().map(|v| *v.shape().last().unwrap()).collect();
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (v, &w) in vals.iter().zip(&widths) {
                    data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor { shape, data }
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(graph.push(value, Op::ConcatLast(ids.clone()), &ids))
    }
}
