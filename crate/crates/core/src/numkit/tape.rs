//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied to [`Var`]s in execution order,
//! so node inputs always precede the node. [`Tape::backward`] walks the
//! records once in reverse and applies each primitive's vector-Jacobian
//! product.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::activation::Activation;
use super::tensor::{sigmoid, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    ColAsRow(usize, usize),
    SliceRows(usize, usize),
    SegmentSum(usize, Rc<[usize]>),
    Tanh(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Act(usize, Activation, usize),
    Sum(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<usize>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    n_params: Cell<usize>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.idx)
    }
}

/// Gradients of a scalar loss, one entry per parameter leaf in registration order.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn wrt(&self, v: &Var<'_>) -> Option<&Tensor> {
        v.tape.nodes.borrow()[v.idx]
            .param
            .map(|p| &self.grads[p])
    }

    pub fn by_index(&self, param: usize) -> &Tensor {
        &self.grads[param]
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn reduce_to(g: Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        g
    } else {
        // scalar side of a broadcast
        Tensor::full(shape, g.sum())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, param: Option<usize>) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("result of {op:?}")));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, param });
        Ok(Var {
            tape: self,
            idx: nodes.len() - 1,
        })
    }

    /// Non-parameter leaf; receives no gradient.
    pub fn constant(&self, t: Tensor) -> Result<Var<'_>> {
        self.push(t, Op::Leaf, None)
    }

    /// Parameter leaf; `backward` returns a gradient for it.
    pub fn param(&self, t: Tensor) -> Result<Var<'_>> {
        let id = self.n_params.get();
        let v = self.push(t, Op::Leaf, Some(id))?;
        self.n_params.set(id + 1);
        Ok(v)
    }

    pub fn n_params(&self) -> usize {
        self.n_params.get()
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        std::ptr::eq(self, v.tape)
    }

    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !self.owns(&loss) {
            return Err(Error::ForeignVar);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.idx].value;
        if !root.is_scalar() {
            return Err(Error::NotScalar(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(Tensor::full(root.shape(), 1.0));

        let mut out: Vec<Option<Tensor>> = vec![None; self.n_params.get()];
        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |j: usize| &nodes[j].value;
            let mut acc = |j: usize, t: Tensor| -> Result<()> {
                match &mut grads[j] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => {
                    if let Some(p) = node.param {
                        out[p] = Some(g);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, reduce_to(g.clone(), val(*a).shape()))?;
                    acc(*b, reduce_to(g, val(*b).shape()))?;
                }
                Op::Sub(a, b) => {
                    acc(*a, reduce_to(g.clone(), val(*a).shape()))?;
                    acc(*b, reduce_to(g.scale(-1.0), val(*b).shape()))?;
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(val(*b))?;
                    let gb = g.mul(val(*a))?;
                    acc(*a, reduce_to(ga, val(*a).shape()))?;
                    acc(*b, reduce_to(gb, val(*b).shape()))?;
                }
                Op::Scale(a, c) => acc(*a, g.scale(*c))?,
                Op::AddScalar(a) => acc(*a, g)?,
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_t(val(*b))?)?;
                    acc(*b, val(*a).t_matmul(&g)?)?;
                }
                Op::MatMulT(a, b) => {
                    acc(*a, g.matmul(val(*b))?)?;
                    acc(*b, g.t_matmul(val(*a))?)?;
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_rows()?.reshape(val(*r).shape().to_vec())?;
                    acc(*a, g)?;
                    acc(*r, gr)?;
                }
                Op::MulRow(a, r) => {
                    let gr = g
                        .mul(val(*a))?
                        .sum_rows()?
                        .reshape(val(*r).shape().to_vec())?;
                    acc(*a, g.mul_row(val(*r))?)?;
                    acc(*r, gr)?;
                }
                Op::ColAsRow(a, j) => {
                    let src = val(*a);
                    let n = src.cols();
                    let mut ga = Tensor::zeros(src.shape());
                    for (r, &gv) in g.data().iter().enumerate() {
                        ga.data_mut()[r * n + j] = gv;
                    }
                    acc(*a, ga)?;
                }
                Op::SliceRows(a, start) => {
                    let src = val(*a);
                    let n = src.cols();
                    let mut ga = Tensor::zeros(src.shape());
                    ga.data_mut()[start * n..start * n + g.numel()].copy_from_slice(g.data());
                    acc(*a, ga)?;
                }
                Op::SegmentSum(a, segs) => {
                    let src = val(*a);
                    let n = src.cols();
                    let mut ga = Tensor::zeros(src.shape());
                    for (p, &s) in segs.iter().enumerate() {
                        ga.data_mut()[p * n..(p + 1) * n]
                            .copy_from_slice(&g.data()[s * n..(s + 1) * n]);
                    }
                    acc(*a, ga)?;
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, g.zip_with(y, "tanh'", |g, y| g * (1.0 - y * y))?)?;
                }
                Op::Softplus(a) => {
                    acc(*a, g.zip_with(val(*a), "softplus'", |g, x| g * sigmoid(x))?)?;
                }
                Op::Exp(a) => acc(*a, g.mul(&node.value)?)?,
                Op::Log(a) => acc(*a, g.zip_with(val(*a), "log'", |g, x| g / x)?)?,
                Op::Act(a, act, k) => {
                    act.check_order(k + 1)?;
                    let (act, k) = (*act, *k + 1);
                    acc(*a, g.zip_with(val(*a), "act'", |g, x| g * act.eval(x, k))?)?;
                }
                Op::Sum(a) => {
                    let gv = g.item()?;
                    acc(*a, Tensor::full(val(*a).shape(), gv))?;
                }
            }
        }
        let grads = out
            .into_iter()
            .enumerate()
            .map(|(p, g)| {
                g.unwrap_or_else(|| {
                    let shape = nodes
                        .iter()
                        .find(|n| n.param == Some(p))
                        .map(|n| n.value.shape().to_vec())
                        .unwrap_or_default();
                    Tensor::zeros(&shape)
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.idx].value.shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.tape.nodes.borrow()[self.idx].value.item()
    }

    fn with2<R>(&self, other: &Var<'t>, f: impl FnOnce(&Tensor, &Tensor) -> R) -> Result<R> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::ForeignVar);
        }
        let nodes = self.tape.nodes.borrow();
        Ok(f(&nodes[self.idx].value, &nodes[other.idx].value))
    }

    fn with1<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.idx].value)
    }

    fn unary(&self, value: Tensor, op: Op) -> Result<Var<'t>> {
        self.tape.push(value, op, None)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with2(other, |a, b| a.add(b))??;
        self.unary(v, Op::Add(self.idx, other.idx))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with2(other, |a, b| a.sub(b))??;
        self.unary(v, Op::Sub(self.idx, other.idx))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with2(other, |a, b| a.mul(b))??;
        self.unary(v, Op::Mul(self.idx, other.idx))
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        let v = self.with1(|a| a.scale(c));
        self.unary(v, Op::Scale(self.idx, c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        let v = self.with1(|a| a.add_scalar(c));
        self.unary(v, Op::AddScalar(self.idx))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with2(other, |a, b| a.matmul(b))??;
        self.unary(v, Op::MatMul(self.idx, other.idx))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with2(other, |a, b| a.matmul_t(b))??;
        self.unary(v, Op::MatMulT(self.idx, other.idx))
    }

    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with2(row, |a, r| a.add_row(r))??;
        self.unary(v, Op::AddRow(self.idx, row.idx))
    }

    pub fn mul_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        let v = self.with2(row, |a, r| a.mul_row(r))??;
        self.unary(v, Op::MulRow(self.idx, row.idx))
    }

    pub fn col_as_row(&self, j: usize) -> Result<Var<'t>> {
        let v = self.with1(|a| a.col_as_row(j))?;
        self.unary(v, Op::ColAsRow(self.idx, j))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.with1(|a| a.slice_rows(start, end))?;
        self.unary(v, Op::SliceRows(self.idx, start))
    }

    /// Sums rows into `n_segments` buckets: `out[segs[p]] += self[p]`.
    pub fn segment_sum(&self, segs: Rc<[usize]>, n_segments: usize) -> Result<Var<'t>> {
        let v = self.with1(|a| segment_sum(a, &segs, n_segments))?;
        self.unary(v, Op::SegmentSum(self.idx, segs))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        let v = self.with1(Tensor::tanh);
        self.unary(v, Op::Tanh(self.idx))
    }

    pub fn softplus(&self) -> Result<Var<'t>> {
        let v = self.with1(Tensor::softplus);
        self.unary(v, Op::Softplus(self.idx))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        let v = self.with1(Tensor::exp);
        self.unary(v, Op::Exp(self.idx))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let v = self.with1(Tensor::log)?;
        self.unary(v, Op::Log(self.idx))
    }

    /// `order`-th derivative of `act`, applied elementwise.
    pub fn act(&self, act: Activation, order: usize) -> Result<Var<'t>> {
        act.check_order(order)?;
        let v = self.with1(|a| a.map(|x| act.eval(x, order)));
        self.unary(v, Op::Act(self.idx, act, order))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let v = Tensor::scalar(self.with1(Tensor::sum));
        self.unary(v, Op::Sum(self.idx))
    }
}

pub(crate) fn segment_sum(a: &Tensor, segs: &[usize], n_segments: usize) -> Result<Tensor> {
    if segs.len() != a.rows() {
        return Err(Error::invalid(format!(
            "segment_sum: {} segment ids for {} rows",
            segs.len(),
            a.rows()
        )));
    }
    let n = a.cols();
    let mut out = vec![0.0; n_segments * n];
    for (p, &s) in segs.iter().enumerate() {
        if s >= n_segments {
            return Err(Error::invalid(format!("segment id {s} >= {n_segments}")));
        }
        for c in 0..n {
            out[s * n + c] += a.data()[p * n + c];
        }
    }
    Tensor::matrix(n_segments, n, out)
}
