use std::rc::Rc;

use super::activation::Activation;
use super::tape::{segment_sum, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// The primitive set shared by plain evaluation ([`Eager`]) and recorded
/// evaluation (`&Tape`). Network and likelihood code is written once against
/// this trait.
pub trait Backend {
    type V: Clone;

    fn constant(&self, t: Tensor) -> Result<Self::V>;
    fn to_tensor(&self, v: &Self::V) -> Tensor;
    fn shape(&self, v: &Self::V) -> Vec<usize>;

    fn add(&self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&self, a: &Self::V, c: f64) -> Result<Self::V>;
    /// `a · wᵀ`.
    fn matmul_t(&self, a: &Self::V, w: &Self::V) -> Result<Self::V>;
    fn add_row(&self, a: &Self::V, row: &Self::V) -> Result<Self::V>;
    fn mul_row(&self, a: &Self::V, row: &Self::V) -> Result<Self::V>;
    fn col_as_row(&self, a: &Self::V, j: usize) -> Result<Self::V>;
    fn slice_rows(&self, a: &Self::V, start: usize, end: usize) -> Result<Self::V>;
    fn segment_sum(&self, a: &Self::V, segs: &Rc<[usize]>, n: usize) -> Result<Self::V>;
    fn act(&self, a: &Self::V, act: Activation, order: usize) -> Result<Self::V>;
    /// Derivatives of orders `0..=max_order` at once.
    fn act_upto(&self, a: &Self::V, act: Activation, max_order: usize) -> Result<Vec<Self::V>> {
        (0..=max_order).map(|k| self.act(a, act, k)).collect()
    }
    fn softplus(&self, a: &Self::V) -> Result<Self::V>;
    fn exp(&self, a: &Self::V) -> Result<Self::V>;
    fn log(&self, a: &Self::V) -> Result<Self::V>;
    fn sum(&self, a: &Self::V) -> Result<Self::V>;
}

/// Direct evaluation with no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Backend for Eager {
    type V = Tensor;

    fn constant(&self, t: Tensor) -> Result<Tensor> {
        Ok(t)
    }
    fn to_tensor(&self, v: &Tensor) -> Tensor {
        v.clone()
    }
    fn shape(&self, v: &Tensor) -> Vec<usize> {
        v.shape().to_vec()
    }
    fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }
    fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }
    fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)
    }
    fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        Ok(a.scale(c))
    }
    fn matmul_t(&self, a: &Tensor, w: &Tensor) -> Result<Tensor> {
        a.matmul_t(w)
    }
    fn add_row(&self, a: &Tensor, row: &Tensor) -> Result<Tensor> {
        a.add_row(row)
    }
    fn mul_row(&self, a: &Tensor, row: &Tensor) -> Result<Tensor> {
        a.mul_row(row)
    }
    fn col_as_row(&self, a: &Tensor, j: usize) -> Result<Tensor> {
        a.col_as_row(j)
    }
    fn slice_rows(&self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        a.slice_rows(start, end)
    }
    fn segment_sum(&self, a: &Tensor, segs: &Rc<[usize]>, n: usize) -> Result<Tensor> {
        segment_sum(a, segs, n)
    }
    fn act(&self, a: &Tensor, act: Activation, order: usize) -> Result<Tensor> {
        act.check_order(order)?;
        Ok(a.map(|x| act.eval(x, order)))
    }
    fn act_upto(&self, a: &Tensor, act: Activation, max_order: usize) -> Result<Vec<Tensor>> {
        act.check_order(max_order)?;
        let y = a.map(|x| act.eval(x, 0));
        if act.derivative_from_output(0.0, 1).is_none() {
            let mut out = vec![y];
            out.extend((1..=max_order).map(|k| a.map(|x| act.eval(x, k))));
            return Ok(out);
        }
        let mut out: Vec<Tensor> = (1..=max_order)
            .map(|k| y.map(|v| act.derivative_from_output(v, k).expect("checked above")))
            .collect();
        out.insert(0, y);
        Ok(out)
    }
    fn softplus(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.softplus())
    }
    fn exp(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.exp())
    }
    fn log(&self, a: &Tensor) -> Result<Tensor> {
        a.log()
    }
    fn sum(&self, a: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(a.sum()))
    }
}

impl<'t> Backend for &'t Tape {
    type V = Var<'t>;

    fn constant(&self, t: Tensor) -> Result<Var<'t>> {
        Tape::constant(self, t)
    }
    fn to_tensor(&self, v: &Var<'t>) -> Tensor {
        v.value()
    }
    fn shape(&self, v: &Var<'t>) -> Vec<usize> {
        v.shape()
    }
    fn add(&self, a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        a.add(b)
    }
    fn sub(&self, a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        a.sub(b)
    }
    fn mul(&self, a: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
        a.mul(b)
    }
    fn scale(&self, a: &Var<'t>, c: f64) -> Result<Var<'t>> {
        a.scale(c)
    }
    fn matmul_t(&self, a: &Var<'t>, w: &Var<'t>) -> Result<Var<'t>> {
        a.matmul_t(w)
    }
    fn add_row(&self, a: &Var<'t>, row: &Var<'t>) -> Result<Var<'t>> {
        a.add_row(row)
    }
    fn mul_row(&self, a: &Var<'t>, row: &Var<'t>) -> Result<Var<'t>> {
        a.mul_row(row)
    }
    fn col_as_row(&self, a: &Var<'t>, j: usize) -> Result<Var<'t>> {
        a.col_as_row(j)
    }
    fn slice_rows(&self, a: &Var<'t>, start: usize, end: usize) -> Result<Var<'t>> {
        a.slice_rows(start, end)
    }
    fn segment_sum(&self, a: &Var<'t>, segs: &Rc<[usize]>, n: usize) -> Result<Var<'t>> {
        a.segment_sum(segs.clone(), n)
    }
    fn act(&self, a: &Var<'t>, act: Activation, order: usize) -> Result<Var<'t>> {
        a.act(act, order)
    }
    fn softplus(&self, a: &Var<'t>) -> Result<Var<'t>> {
        a.softplus()
    }
    fn exp(&self, a: &Var<'t>) -> Result<Var<'t>> {
        a.exp()
    }
    fn log(&self, a: &Var<'t>) -> Result<Var<'t>> {
        a.log()
    }
    fn sum(&self, a: &Var<'t>) -> Result<Var<'t>> {
        a.sum()
    }
}
