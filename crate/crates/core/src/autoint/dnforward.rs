//! Dynamic-programming forward pass for mixed partial derivatives of an
//! integral network.
//!
//! For a requested multiset of input axes `D`, every sub-multiset `K ⊆ D`
//! gets one tangent per layer. Linear layers map tangents through `Wᵀ`
//! (bias only on the primal). An elementwise activation `h = σ(z)` combines
//! the pre-activation tangents with Faà di Bruno's formula
//!
//! ```text
//! ∂^K h = Σ_{π partition of K} σ^(|π|)(z) ∘ Π_{B ∈ π} ∂^B z
//! ```
//!
//! Each sub-multiset is evaluated once per layer and each σ^(k)(z) once per
//! layer. Repeated axes share keys, so univariate requests touch fewer
//! tangents than mixed ones.

use std::collections::BTreeMap;

use super::mlp::{BoundMlp, ParamSet};
use super::partitions::all_set_partitions;
use crate::error::{Error, Result};
use crate::numkit::{Backend, Eager, Tensor};

/// Highest total derivative order supported.
pub const MAX_DERIV_ORDER: usize = 3;

/// Ordered multiset of input axes to differentiate by.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivSpec {
    dims: Vec<usize>,
}

impl DerivSpec {
    pub fn new(dims: &[usize], input_dim: usize) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("derivative spec needs at least one axis"));
        }
        if dims.len() > MAX_DERIV_ORDER {
            return Err(Error::UnsupportedOrder {
                activation: "any".into(),
                order: dims.len(),
            });
        }
        if let Some(&d) = dims.iter().find(|&&d| d >= input_dim) {
            return Err(Error::invalid(format!(
                "axis {d} out of range for input dimension {input_dim}"
            )));
        }
        Ok(DerivSpec { dims: dims.to_vec() })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }
}

#[derive(Clone, Debug)]
struct Term {
    coeff: f64,
    blocks: Vec<usize>,
}

/// Precomputed bookkeeping for one [`DerivSpec`].
#[derive(Clone, Debug)]
struct Plan {
    /// Sorted sub-multisets; index 0 is the empty key (the primal).
    keys: Vec<Vec<usize>>,
    /// For each key, Faà di Bruno terms grouped by partition size
    /// (`terms[key][k-1]` holds partitions into `k` blocks).
    terms: Vec<Vec<Vec<Term>>>,
    top: usize,
}

impl Plan {
    fn new(spec: &DerivSpec) -> Plan {
        let dims = spec.dims();
        let m = dims.len();
        let key_of = |mask: usize| -> Vec<usize> {
            let mut k: Vec<usize> = (0..m).filter(|p| mask & (1 << p) != 0).map(|p| dims[p]).collect();
            k.sort_unstable();
            k
        };
        // representative mask per distinct key, ordered by (size, key)
        let mut reps: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
        for mask in 0..(1usize << m) {
            reps.entry((mask.count_ones() as usize, key_of(mask))).or_insert(mask);
        }
        let keys: Vec<Vec<usize>> = reps.keys().map(|(_, k)| k.clone()).collect();
        let index: BTreeMap<&Vec<usize>, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();

        let mut terms = Vec::with_capacity(keys.len());
        for ((size, _), &mask) in &reps {
            let positions: Vec<usize> = (0..m).filter(|p| mask & (1 << p) != 0).collect();
            let mut grouped: Vec<BTreeMap<Vec<usize>, f64>> = vec![BTreeMap::new(); *size];
            if *size > 0 {
                for part in all_set_partitions(&positions) {
                    let mut blocks: Vec<usize> = part
                        .iter()
                        .map(|blk| index[&key_of(blk.iter().fold(0, |acc, p| acc | (1 << p)))])
                        .collect();
                    blocks.sort_unstable();
                    *grouped[part.len() - 1].entry(blocks).or_insert(0.0) += 1.0;
                }
            }
            terms.push(
                grouped
                    .into_iter()
                    .map(|g| g.into_iter().map(|(blocks, coeff)| Term { coeff, blocks }).collect())
                    .collect(),
            );
        }
        let top = keys.len() - 1;
        Plan { keys, terms, top }
    }
}

/// A derivative value, tracking structure that lets the pass skip work:
/// exact zeros, the input one-hot seed, and batch-constant rows `[1, n]`.
#[derive(Clone, Debug)]
pub enum Tangent<V> {
    Zero,
    Seed(usize),
    Row(V),
    Full(V),
}

fn tan_mul<B: Backend>(be: &B, a: &Tangent<B::V>, b: &Tangent<B::V>) -> Result<Tangent<B::V>> {
    use Tangent::*;
    Ok(match (a, b) {
        (Zero, _) | (_, Zero) => Zero,
        (Row(x), Row(y)) => Row(be.mul(x, y)?),
        (Row(r), Full(f)) | (Full(f), Row(r)) => Full(be.mul_row(f, r)?),
        (Full(x), Full(y)) => Full(be.mul(x, y)?),
        (Seed(_), _) | (_, Seed(_)) => {
            return Err(Error::invalid("input seed reached an activation layer"))
        }
    })
}

fn tan_add<B: Backend>(be: &B, a: Tangent<B::V>, b: Tangent<B::V>) -> Result<Tangent<B::V>> {
    use Tangent::*;
    Ok(match (a, b) {
        (Zero, x) | (x, Zero) => x,
        (Row(x), Row(y)) => Row(be.add(&x, &y)?),
        (Row(r), Full(f)) | (Full(f), Row(r)) => Full(be.add_row(&f, &r)?),
        (Full(x), Full(y)) => Full(be.add(&x, &y)?),
        (Seed(_), _) | (_, Seed(_)) => {
            return Err(Error::invalid("input seed cannot be summed"))
        }
    })
}

fn tan_scale<B: Backend>(be: &B, a: Tangent<B::V>, c: f64) -> Result<Tangent<B::V>> {
    if c == 1.0 {
        return Ok(a);
    }
    Ok(match a {
        Tangent::Row(x) => Tangent::Row(be.scale(&x, c)?),
        Tangent::Full(x) => Tangent::Full(be.scale(&x, c)?),
        other => other,
    })
}

fn tan_linear<B: Backend>(be: &B, a: &Tangent<B::V>, w: &B::V) -> Result<Tangent<B::V>> {
    Ok(match a {
        Tangent::Zero => Tangent::Zero,
        Tangent::Seed(axis) => Tangent::Row(be.col_as_row(w, *axis)?),
        Tangent::Row(r) => Tangent::Row(be.matmul_t(r, w)?),
        Tangent::Full(f) => Tangent::Full(be.matmul_t(f, w)?),
    })
}

/// Counters for the memoization invariant.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DerivStats {
    /// Activation-derivative evaluations (any order, including the primal σ) per activation layer.
    pub activation_evals: Vec<usize>,
    pub distinct_subsets: usize,
}

/// Final-layer values of every sub-derivative computed for one request.
#[derive(Clone, Debug)]
pub struct DerivCache<V> {
    keys: Vec<Vec<usize>>,
    outputs: Vec<V>,
    top: usize,
    pub stats: DerivStats,
}

impl<V: Clone> DerivCache<V> {
    /// The requested derivative.
    pub fn top(&self) -> &V {
        &self.outputs[self.top]
    }

    /// F_θ(x) itself.
    pub fn primal(&self) -> &V {
        &self.outputs[0]
    }

    /// Any cached sub-derivative, looked up by its axes (order-insensitive).
    pub fn get(&self, dims: &[usize]) -> Option<&V> {
        let mut k = dims.to_vec();
        k.sort_unstable();
        self.keys.iter().position(|x| *x == k).map(|i| &self.outputs[i])
    }

    pub fn into_top(mut self) -> V {
        self.outputs.swap_remove(self.top)
    }
}

/// Runs the derivative pass for `spec` on `x: [batch, input_dim]`.
pub fn dnforward_cache<B: Backend>(
    be: &B,
    net: &BoundMlp<B::V>,
    x: &B::V,
    spec: &DerivSpec,
) -> Result<DerivCache<B::V>> {
    let plan = Plan::new(spec);
    let n_keys = plan.keys.len();
    let batch = be.shape(x)[0];

    let mut tans: Vec<Tangent<B::V>> = plan
        .keys
        .iter()
        .map(|k| match k.len() {
            0 => Tangent::Full(x.clone()),
            1 => Tangent::Seed(k[0]),
            _ => Tangent::Zero,
        })
        .collect();

    let mut stats = DerivStats {
        activation_evals: Vec::new(),
        distinct_subsets: n_keys,
    };
    let last = net.weights.len() - 1;
    for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        // linear layer
        for (i, t) in tans.iter_mut().enumerate() {
            let mut next = tan_linear(be, t, w)?;
            if i == 0 {
                if let (Some(b), Tangent::Full(z)) = (b, &next) {
                    next = Tangent::Full(be.add_row(z, b)?);
                }
            }
            *t = next;
        }
        if l == last {
            break;
        }
        // activation layer
        let Tangent::Full(z) = &tans[0] else {
            return Err(Error::invalid("primal must be a full tensor"));
        };
        let mut sigma = be.act_upto(z, net.activation, spec.order())?.into_iter();
        let primal = sigma.next().expect("order 0 is always present");
        let sigma: Vec<B::V> = sigma.collect();
        let evals = sigma.len() + 1;
        let mut next = Vec::with_capacity(n_keys);
        next.push(Tangent::Full(primal));
        for key in 1..n_keys {
            let mut total = Tangent::Zero;
            for (kminus1, group) in plan.terms[key].iter().enumerate() {
                let mut inner = Tangent::Zero;
                for term in group {
                    let mut prod = tans[term.blocks[0]].clone();
                    for &b in &term.blocks[1..] {
                        prod = tan_mul(be, &prod, &tans[b])?;
                    }
                    inner = tan_add(be, inner, tan_scale(be, prod, term.coeff)?)?;
                }
                let scaled = match inner {
                    Tangent::Zero => continue,
                    Tangent::Row(r) => Tangent::Full(be.mul_row(&sigma[kminus1], &r)?),
                    Tangent::Full(f) => Tangent::Full(be.mul(&sigma[kminus1], &f)?),
                    Tangent::Seed(_) => return Err(Error::invalid("input seed reached an activation layer")),
                };
                total = tan_add(be, total, scaled)?;
            }
            next.push(total);
        }
        stats.activation_evals.push(evals);
        tans = next;
    }

    let out_dim = be.shape(&net.weights[last])[0];
    let outputs = tans
        .into_iter()
        .map(|t| match t {
            Tangent::Full(v) => Ok(v),
            Tangent::Row(r) => be.add_row(&be.constant(Tensor::zeros(&[batch, out_dim]))?, &r),
            Tangent::Zero | Tangent::Seed(_) => be.constant(Tensor::zeros(&[batch, out_dim])),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DerivCache {
        keys: plan.keys,
        outputs,
        top: plan.top,
        stats,
    })
}

/// ∂^|dims| F_θ / ∂x_dims on any backend.
pub fn dnforward<B: Backend>(be: &B, net: &BoundMlp<B::V>, x: &B::V, spec: &DerivSpec) -> Result<B::V> {
    Ok(dnforward_cache(be, net, x, spec)?.into_top())
}

impl ParamSet {
    /// Exact mixed partial of the integral network at each row of `x`.
    pub fn dnforward(&self, x: &Tensor, dims: &[usize]) -> Result<Tensor> {
        self.check_input(x)?;
        let spec = DerivSpec::new(dims, self.spec.input_dim())?;
        dnforward(&Eager, &self.bind_eager()?, x, &spec)
    }

    pub fn dnforward_cache(&self, x: &Tensor, dims: &[usize]) -> Result<DerivCache<Tensor>> {
        self.check_input(x)?;
        let spec = DerivSpec::new(dims, self.spec.input_dim())?;
        dnforward_cache(&Eager, &self.bind_eager()?, x, &spec)
    }
}
