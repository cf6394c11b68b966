//! Reference derivative path: nested symbolic reverse-mode differentiation.
//!
//! The integral network is built as an expression graph. Each requested axis
//! runs a full reverse sweep over the current graph that produces a *new*
//! graph for the input gradient, from which one column is kept. Nothing is
//! shared between the nested sweeps beyond node identity within a single
//! evaluation, which mirrors differentiating with `create_graph` semantics.

use std::collections::HashMap;
use std::rc::Rc;

use super::dnforward::DerivSpec;
use super::mlp::ParamSet;
use crate::error::{Error, Result};
use crate::numkit::{Activation, Tensor};

#[derive(Debug)]
enum Expr {
    Input,
    Ones,
    /// `e · W_lᵀ`
    Linear(E, usize),
    /// `e · W_l`
    LinearT(E, usize),
    Bias(E, usize),
    Act(E, usize),
    Mul(E, E),
    Add(E, E),
    Col(E, usize),
    Scatter(E, usize, usize),
}

type E = Rc<Expr>;

fn key(e: &E) -> *const Expr {
    Rc::as_ptr(e)
}

fn add(a: Option<E>, b: E) -> E {
    match a {
        Some(a) => Rc::new(Expr::Add(a, b)),
        None => b,
    }
}

fn children(e: &Expr) -> Vec<&E> {
    match e {
        Expr::Input | Expr::Ones => vec![],
        Expr::Linear(a, _)
        | Expr::LinearT(a, _)
        | Expr::Bias(a, _)
        | Expr::Act(a, _)
        | Expr::Col(a, _)
        | Expr::Scatter(a, _, _) => vec![a],
        Expr::Mul(a, b) | Expr::Add(a, b) => vec![a, b],
    }
}

fn topo(root: &E) -> Vec<E> {
    let mut seen = std::collections::HashSet::new();
    let mut order = Vec::new();
    // iterative post-order
    let mut stack: Vec<(E, bool)> = vec![(root.clone(), false)];
    while let Some((e, expanded)) = stack.pop() {
        if expanded {
            order.push(e);
            continue;
        }
        if !seen.insert(key(&e)) {
            continue;
        }
        stack.push((e.clone(), true));
        for c in children(&e) {
            if !seen.contains(&key(c)) {
                stack.push((c.clone(), false));
            }
        }
    }
    order
}

/// Gradient graph of `sum(root)` with respect to the input, or `None` if the
/// input is unreachable.
fn grad_input(root: &E, input: &E, input_dim: usize) -> Option<E> {
    let order = topo(root);
    let mut adj: HashMap<*const Expr, E> = HashMap::new();
    adj.insert(key(root), Rc::new(Expr::Ones));
    for e in order.iter().rev() {
        let Some(g) = adj.get(&key(e)).cloned() else { continue };
        let mut push = |child: &E, contrib: E| {
            let prev = adj.remove(&key(child));
            adj.insert(key(child), add(prev, contrib));
        };
        match e.as_ref() {
            Expr::Input | Expr::Ones => {}
            Expr::Linear(a, l) => push(a, Rc::new(Expr::LinearT(g, *l))),
            Expr::LinearT(a, l) => push(a, Rc::new(Expr::Linear(g, *l))),
            Expr::Bias(a, _) => push(a, g),
            Expr::Act(a, k) => {
                let d = Rc::new(Expr::Act(a.clone(), k + 1));
                push(a, Rc::new(Expr::Mul(g, d)));
            }
            Expr::Mul(a, b) => {
                push(a, Rc::new(Expr::Mul(g.clone(), b.clone())));
                push(b, Rc::new(Expr::Mul(g, a.clone())));
            }
            Expr::Add(a, b) => {
                push(a, g.clone());
                push(b, g);
            }
            // columns are only ever taken from input-gradient graphs
            Expr::Col(a, j) => push(a, Rc::new(Expr::Scatter(g, *j, input_dim))),
            Expr::Scatter(a, j, _) => push(a, Rc::new(Expr::Col(g, *j))),
        }
    }
    adj.remove(&key(input))
}

struct Evaluator<'a> {
    x: &'a Tensor,
    weights: &'a [Tensor],
    biases: Vec<Option<&'a Tensor>>,
    act: Activation,
    memo: HashMap<*const Expr, Rc<Tensor>>,
}

impl Evaluator<'_> {
    fn eval(&mut self, e: &E) -> Result<Rc<Tensor>> {
        if let Some(v) = self.memo.get(&key(e)) {
            return Ok(v.clone());
        }
        let v = match e.as_ref() {
            Expr::Input => self.x.clone(),
            Expr::Ones => Tensor::full(&[self.x.rows(), 1], 1.0),
            Expr::Linear(a, l) => self.eval(a)?.matmul_t(&self.weights[*l])?,
            Expr::LinearT(a, l) => self.eval(a)?.matmul(&self.weights[*l])?,
            Expr::Bias(a, l) => {
                let b = self.biases[*l].ok_or_else(|| Error::invalid("bias node without bias"))?;
                self.eval(a)?.add_row(b)?
            }
            Expr::Act(a, k) => {
                self.act.check_order(*k)?;
                let (act, k) = (self.act, *k);
                self.eval(a)?.map(|v| act.eval(v, k))
            }
            Expr::Mul(a, b) => {
                let a = self.eval(a)?;
                a.mul(&*self.eval(b)?)?
            }
            Expr::Add(a, b) => {
                let a = self.eval(a)?;
                a.add(&*self.eval(b)?)?
            }
            Expr::Col(a, j) => self.eval(a)?.col(*j)?,
            Expr::Scatter(a, j, width) => {
                let a = self.eval(a)?;
                let mut out = Tensor::zeros(&[a.rows(), *width]);
                for r in 0..a.rows() {
                    out.data_mut()[r * width + j] = a.data()[r];
                }
                out
            }
        };
        let v = Rc::new(v);
        self.memo.insert(key(e), v.clone());
        Ok(v)
    }
}

/// Same contract as [`ParamSet::dnforward`], computed by nesting one
/// reverse-mode symbolic differentiation per axis.
pub fn naive_dnforward(ps: &ParamSet, x: &Tensor, dims: &[usize]) -> Result<Tensor> {
    ps.check_input(x)?;
    let d = ps.spec.input_dim();
    let spec = DerivSpec::new(dims, d)?;
    let n = ps.spec.n_linear();
    let input: E = Rc::new(Expr::Input);
    let mut h = input.clone();
    for (l, layer) in ps.layers.iter().enumerate() {
        let mut z = Rc::new(Expr::Linear(h, l));
        if layer.b.is_some() {
            z = Rc::new(Expr::Bias(z, l));
        }
        h = if l + 1 < n { Rc::new(Expr::Act(z, 0)) } else { z };
    }
    if ps.spec.output_dim() != 1 {
        return Err(Error::invalid("naive path differentiates scalar networks only"));
    }
    let mut expr = h;
    for &axis in spec.dims() {
        match grad_input(&expr, &input, d) {
            Some(g) => expr = Rc::new(Expr::Col(g, axis)),
            None => return Ok(Tensor::zeros(&[x.rows(), 1])),
        }
    }
    let weights = ps.effective_weights();
    let mut ev = Evaluator {
        x,
        weights: &weights,
        biases: ps.layers.iter().map(|l| l.b.as_ref()).collect(),
        act: ps.spec.activation,
        memo: HashMap::new(),
    };
    let out = ev.eval(&expr)?;
    Ok(Rc::try_unwrap(out).unwrap_or_else(|rc| (*rc).clone()))
}
