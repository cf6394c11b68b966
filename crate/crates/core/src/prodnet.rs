//! Decomposable 3D influence functions.
//!
//! A [`ProdSum`] models `f(x, y, t) = Σ_i f¹_i(x) f²_i(y) f³_i(t)`, where every
//! factor is the first derivative of a univariate integral network `F^k_i`.
//! Its triple antiderivative is `Σ_i F¹_i F²_i F³_i`, so integrals over
//! axis-aligned boxes reduce to differences of integral-network outputs.
//!
//! With nonnegative weights and a nondecreasing activation each `F^k_i` is
//! nondecreasing, which makes every factor, and hence the influence, nonnegative.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoint::{
    dnforward_cache, integral_forward, BoundMlp, DerivSpec, InitOptions, MlpSpec, ParamSet, WeightConstraint,
};
use crate::error::{Error, Result};
use crate::numkit::{Activation, Backend, Eager, Tensor};

/// Axis-aligned box in (x, y, t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Cuboid {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        for k in 0..3 {
            if !(lo[k].is_finite() && hi[k].is_finite()) {
                return Err(Error::NonFinite(format!("cuboid bounds {lo:?} .. {hi:?}")));
            }
            if lo[k] >= hi[k] {
                return Err(Error::invalid(format!(
                    "degenerate cuboid on axis {k}: lo {} >= hi {}",
                    lo[k], hi[k]
                )));
            }
        }
        Ok(Cuboid { lo, hi })
    }

    pub fn unit() -> Self {
        Cuboid {
            lo: [0.0; 3],
            hi: [1.0; 3],
        }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.hi[k] - self.lo[k]).product()
    }
}

/// One product term: integral networks for the x, y and t factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prod1D {
    pub factors: [ParamSet; 3],
}

impl Prod1D {
    fn validate(&self) -> Result<()> {
        for f in &self.factors {
            f.spec.validate()?;
            if f.spec.input_dim() != 1 || f.spec.output_dim() != 1 {
                return Err(Error::invalid(format!(
                    "product factors must map R -> R, got widths {:?}",
                    f.spec.widths
                )));
            }
        }
        Ok(())
    }
}

/// Construction options for [`ProdSum::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProdSumConfig {
    pub n_terms: usize,
    /// Hidden widths of each univariate integral network.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Nonnegative-reparametrized weights (the positivity guarantee).
    pub constrained: bool,
    /// Expected input interval per axis, used to spread initial activation centres.
    pub ranges: [(f64, f64); 3],
    pub gain: f64,
}

impl Default for ProdSumConfig {
    fn default() -> Self {
        ProdSumConfig {
            n_terms: 2,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            constrained: true,
            ranges: [(-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)],
            gain: 1.7,
        }
    }
}

/// Sum of `N` product terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProdSumRepr", into = "ProdSumRepr")]
pub struct ProdSum {
    terms: Vec<Prod1D>,
}

#[derive(Serialize, Deserialize)]
struct ProdSumRepr {
    #[serde(rename = "N")]
    n: usize,
    terms: Vec<Prod1D>,
}

impl TryFrom<ProdSumRepr> for ProdSum {
    type Error = Error;
    fn try_from(r: ProdSumRepr) -> Result<Self> {
        if r.n != r.terms.len() {
            return Err(Error::invalid(format!("N = {} but {} terms given", r.n, r.terms.len())));
        }
        ProdSum::from_terms(r.terms)
    }
}

impl From<ProdSum> for ProdSumRepr {
    fn from(p: ProdSum) -> Self {
        ProdSumRepr {
            n: p.terms.len(),
            terms: p.terms,
        }
    }
}

/// Effective weights of every factor, lifted into a backend.
#[derive(Clone, Debug)]
pub struct BoundProdSum<V> {
    pub terms: Vec<[BoundMlp<V>; 3]>,
}

/// Output of [`prodsum_parts`]; each part is `None` when no rows were requested.
#[derive(Clone, Debug)]
pub struct ProdSumParts<V> {
    /// Influence at the point rows, `[points, 1]`.
    pub influence: Option<V>,
    /// Box integrals, `[boxes, 1]`.
    pub mass: Option<V>,
}

impl ProdSum {
    pub fn new<R: Rng + ?Sized>(cfg: &ProdSumConfig, rng: &mut R) -> Result<Self> {
        if cfg.n_terms == 0 {
            return Err(Error::invalid("a ProdSum needs at least one term"));
        }
        let mut widths = vec![1];
        widths.extend_from_slice(&cfg.hidden);
        widths.push(1);
        let mut spec = MlpSpec::new(widths, cfg.activation);
        if cfg.constrained {
            spec = spec.nonnegative();
        }
        let mut terms = Vec::with_capacity(cfg.n_terms);
        for _ in 0..cfg.n_terms {
            let mut make = |axis: usize| {
                let opts = InitOptions {
                    input_range: Some(cfg.ranges[axis]),
                    gain: cfg.gain,
                };
                ParamSet::init_with(spec.clone(), rng, opts)
            };
            let factors = [make(0)?, make(1)?, make(2)?];
            terms.push(Prod1D { factors });
        }
        ProdSum::from_terms(terms)
    }

    pub fn from_terms(terms: Vec<Prod1D>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("a ProdSum needs at least one term"));
        }
        for t in &terms {
            t.validate()?;
        }
        Ok(ProdSum { terms })
    }

    pub fn terms(&self) -> &[Prod1D] {
        &self.terms
    }

    pub fn terms_mut(&mut self) -> &mut [Prod1D] {
        &mut self.terms
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    /// True when every factor is provably nonnegative: nonnegative weights
    /// and an activation with a nonnegative first derivative.
    pub fn is_constrained(&self) -> bool {
        self.terms.iter().flat_map(|t| t.factors.iter()).all(|f| {
            f.spec.constraint == WeightConstraint::NonnegativeReparam && f.spec.activation.nonneg_derivatives_up_to(1)
        })
    }

    pub fn n_params(&self) -> usize {
        self.terms.iter().flat_map(|t| t.factors.iter()).map(ParamSet::n_params).sum()
    }

    /// All parameter tensors, term by term and factor by factor.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.terms
            .iter()
            .flat_map(|t| t.factors.iter())
            .flat_map(|f| f.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.terms
            .iter_mut()
            .flat_map(|t| t.factors.iter_mut())
            .flat_map(|f| f.tensors_mut())
            .collect()
    }

    /// Binds raw parameter values given in [`ProdSum::tensors`] order.
    pub fn bind<B: Backend>(&self, be: &B, raw: &[B::V]) -> Result<BoundProdSum<B::V>> {
        let expected = self.tensors().len();
        if raw.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameter values, got {}",
                raw.len()
            )));
        }
        let mut offset = 0;
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut bind_one = |f: &ParamSet| {
                let n = f.tensors().len();
                let b = f.bind(be, &raw[offset..offset + n]);
                offset += n;
                b
            };
            let bx = bind_one(&t.factors[0])?;
            let by = bind_one(&t.factors[1])?;
            let bt = bind_one(&t.factors[2])?;
            terms.push([bx, by, bt]);
        }
        Ok(BoundProdSum { terms })
    }

    pub fn bind_eager(&self) -> Result<BoundProdSum<Tensor>> {
        let raw: Vec<Tensor> = self.tensors().into_iter().cloned().collect();
        self.bind(&Eager, &raw)
    }

    /// Influence at each row `(dx, dy, dt)` of `pts: [n, 3]`.
    pub fn influence_batch(&self, pts: &Tensor) -> Result<Tensor> {
        check_points(pts)?;
        let axes = [pts.col(0)?, pts.col(1)?, pts.col(2)?];
        let parts = prodsum_parts(&Eager, &self.bind_eager()?, &axes, pts.rows(), 0)?;
        Ok(parts.influence.unwrap_or_else(|| Tensor::zeros(&[0, 1])))
    }

    pub fn influence(&self, dx: f64, dy: f64, dt: f64) -> Result<f64> {
        self.influence_batch(&Tensor::row(vec![dx, dy, dt]))?.item()
    }

    /// `Σ_i F¹_i(x) F²_i(y) F³_i(t)` at each row of `pts: [n, 3]`.
    pub fn antideriv_batch(&self, pts: &Tensor) -> Result<Tensor> {
        check_points(pts)?;
        let mut total = Tensor::zeros(&[pts.rows(), 1]);
        for t in &self.terms {
            let mut prod = t.factors[0].forward(&pts.col(0)?)?;
            for k in 1..3 {
                prod = prod.mul(&t.factors[k].forward(&pts.col(k)?)?)?;
            }
            total.add_assign(&prod)?;
        }
        Ok(total)
    }

    pub fn antideriv(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        self.antideriv_batch(&Tensor::row(vec![x, y, t]))?.item()
    }

    /// Exact integral of the influence over `c`.
    pub fn cuboid_integral(&self, c: &Cuboid) -> Result<f64> {
        Ok(self.cuboid_integrals(std::slice::from_ref(c))?[0])
    }

    pub fn cuboid_integrals(&self, boxes: &[Cuboid]) -> Result<Vec<f64>> {
        if boxes.is_empty() {
            return Ok(Vec::new());
        }
        let n = boxes.len();
        let axes: Vec<Tensor> = (0..3)
            .map(|k| Tensor::column(boxes.iter().map(|c| c.lo[k]).chain(boxes.iter().map(|c| c.hi[k])).collect()))
            .collect();
        let axes = [axes[0].clone(), axes[1].clone(), axes[2].clone()];
        let parts = prodsum_parts(&Eager, &self.bind_eager()?, &axes, 0, n)?;
        Ok(parts.mass.expect("boxes requested").into_data())
    }

    /// Integral-network values `F` and factor values `f = F'` of one factor
    /// at scalar inputs `u`.
    pub fn factor_table(&self, term: usize, axis: usize, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = self
            .terms
            .get(term)
            .and_then(|t| t.factors.get(axis))
            .ok_or_else(|| Error::invalid(format!("no factor ({term}, {axis})")))?;
        let cache = f.dnforward_cache(&Tensor::column(u.to_vec()), &[0])?;
        Ok((cache.primal().data().to_vec(), cache.top().data().to_vec()))
    }
}

fn check_points(pts: &Tensor) -> Result<()> {
    if pts.shape().len() != 2 || pts.cols() != 3 {
        return Err(Error::shape("prodsum points", pts.shape(), &[pts.rows(), 3]));
    }
    Ok(())
}

/// Influence and box integrals from one derivative pass per factor.
///
/// Each `axes[k]` is a `[points + 2·boxes, 1]` column: first the `points`
/// coordinates where the influence is wanted, then the lower corners of the
/// boxes, then their upper corners.
pub fn prodsum_parts<B: Backend>(
    be: &B,
    net: &BoundProdSum<B::V>,
    axes: &[B::V; 3],
    points: usize,
    boxes: usize,
) -> Result<ProdSumParts<B::V>> {
    let rows = points + 2 * boxes;
    for a in axes {
        let s = be.shape(a);
        if s != [rows, 1] {
            return Err(Error::shape("prodsum_parts", &s, &[rows, 1]));
        }
    }
    if rows == 0 {
        return Ok(ProdSumParts {
            influence: None,
            mass: None,
        });
    }
    let spec = DerivSpec::new(&[0], 1)?;
    let mut influence: Option<B::V> = None;
    let mut mass: Option<B::V> = None;
    for term in &net.terms {
        let mut f_prod: Option<B::V> = None;
        let mut m_prod: Option<B::V> = None;
        for (k, factor) in term.iter().enumerate() {
            let (primal, deriv) = if points > 0 {
                let cache = dnforward_cache(be, factor, &axes[k], &spec)?;
                (cache.primal().clone(), Some(cache.top().clone()))
            } else {
                (integral_forward(be, factor, &axes[k])?, None)
            };
            if let Some(d) = deriv {
                let d = if boxes > 0 { be.slice_rows(&d, 0, points)? } else { d };
                f_prod = Some(match f_prod {
                    Some(p) => be.mul(&p, &d)?,
                    None => d,
                });
            }
            if boxes > 0 {
                let lo = be.slice_rows(&primal, points, points + boxes)?;
                let hi = be.slice_rows(&primal, points + boxes, rows)?;
                let diff = be.sub(&hi, &lo)?;
                m_prod = Some(match m_prod {
                    Some(p) => be.mul(&p, &diff)?,
                    None => diff,
                });
            }
        }
        influence = accumulate(be, influence, f_prod)?;
        mass = accumulate(be, mass, m_prod)?;
    }
    Ok(ProdSumParts { influence, mass })
}

fn accumulate<B: Backend>(be: &B, acc: Option<B::V>, next: Option<B::V>) -> Result<Option<B::V>> {
    Ok(match (acc, next) {
        (Some(a), Some(n)) => Some(be.add(&a, &n)?),
        (None, n) => n,
        (a, None) => a,
    })
}

/// A single trivariate integral network whose triple mixed partial is
/// nonnegative because all weights are nonnegative and the activation has
/// nonnegative derivatives of orders 1 through 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedTriple {
    net: ParamSet,
}

impl ConstrainedTriple {
    /// The comparator used by the fit check: `[3, 32, 32, 1]`, softplus-cubed.
    pub fn default_spec() -> MlpSpec {
        MlpSpec::new(vec![3, 32, 32, 1], Activation::SoftplusCubed).nonnegative()
    }

    /// `input_range` is the interval every input coordinate is expected to span.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, input_range: Option<(f64, f64)>, rng: &mut R) -> Result<Self> {
        Self::check_spec(&spec)?;
        let opts = InitOptions { input_range, gain: 0.5 };
        Self::from_params(ParamSet::init_with(spec, rng, opts)?)
    }

    pub fn from_params(net: ParamSet) -> Result<Self> {
        Self::check_spec(&net.spec)?;
        Ok(ConstrainedTriple { net })
    }

    fn check_spec(spec: &MlpSpec) -> Result<()> {
        spec.validate()?;
        if spec.input_dim() != 3 || spec.output_dim() != 1 {
            return Err(Error::invalid(format!("triple network must map R^3 -> R, got {:?}", spec.widths)));
        }
        if spec.constraint != WeightConstraint::NonnegativeReparam {
            return Err(Error::invalid("triple network requires nonnegative-reparametrized weights"));
        }
        if !spec.activation.nonneg_derivatives_up_to(3) {
            return Err(Error::invalid(format!(
                "activation {} does not have nonnegative derivatives up to order 3",
                spec.activation.name()
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> &ParamSet {
        &self.net
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.net
    }

    /// ∂³F/∂x∂y∂t at each row of `pts: [n, 3]`.
    pub fn density_batch(&self, pts: &Tensor) -> Result<Tensor> {
        self.net.dnforward(pts, &[0, 1, 2])
    }

    /// Eight-corner inclusion-exclusion of the integral network.
    pub fn cuboid_integral(&self, c: &Cuboid) -> Result<f64> {
        let mut rows = Vec::with_capacity(8);
        let mut signs = Vec::with_capacity(8);
        for corner in 0..8 {
            let mut p = vec![0.0; 3];
            let mut sign = 1.0;
            for (k, v) in p.iter_mut().enumerate() {
                if corner >> k & 1 == 1 {
                    *v = c.hi[k];
                } else {
                    *v = c.lo[k];
                    sign = -sign;
                }
            }
            rows.push(p);
            signs.push(sign);
        }
        let vals = self.net.forward(&Tensor::from_rows(&rows)?)?;
        Ok(vals.data().iter().zip(&signs).map(|(v, s)| v * s).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A factor whose integral network is `F(u) = c·u`.
    fn linear_factor(c: f64) -> ParamSet {
        let mut ps = ParamSet::zeros(MlpSpec::new(vec![1, 1], Activation::Tanh)).unwrap();
        ps.layers[0].w = Tensor::row(vec![c]);
        ps
    }

    fn linear_prodsum(n: usize, c: f64) -> ProdSum {
        let term = Prod1D {
            factors: [linear_factor(c), linear_factor(c), linear_factor(c)],
        };
        ProdSum::from_terms(vec![term; n]).unwrap()
    }

    #[test]
    fn constant_factors() {
        let ps = linear_prodsum(1, 0.5);
        assert!((ps.influence(0.3, -2.0, 7.0).unwrap() - 0.125).abs() < 1e-15);
        let ps = linear_prodsum(3, 1.0);
        assert!((ps.antideriv(2.0, 3.0, 0.5).unwrap() - 9.0).abs() < 1e-14);
        assert!((ps.cuboid_integral(&Cuboid::unit()).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_factor_kills_term() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ProdSum::new(&ProdSumConfig { n_terms: 1, ..Default::default() }, &mut r).unwrap();
        for t in ps.terms[0].factors[1].tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        // nonneg reparam: raw zero is softplus(0) > 0, so switch the factor to free weights
        ps.terms[0].factors[1].spec.constraint = WeightConstraint::Free;
        assert_eq!(ps.influence(0.1, 0.2, 0.3).unwrap(), 0.0);
        assert!(!ps.is_constrained());
    }

    #[test]
    fn degenerate_cuboid_rejected() {
        assert!(Cuboid::new([0.0, 0.0, 0.0], [1.0, 0.0, 1.0]).is_err());
        assert!(Cuboid::new([0.0, 0.0, 2.0], [1.0, 1.0, 1.0]).is_err());
        assert!(Cuboid::new([0.0, 0.0, 0.0], [1.0, f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn cuboid_matches_corner_inclusion_exclusion() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let ps = ProdSum::new(&ProdSumConfig { hidden: vec![8, 8], ..Default::default() }, &mut r).unwrap();
        let c = Cuboid::new([-0.3, 0.1, 0.0], [0.8, 1.4, 2.5]).unwrap();
        let mut ie = 0.0;
        for corner in 0..8 {
            let mut p = [0.0; 3];
            let mut sign = 1.0;
            for (k, pk) in p.iter_mut().enumerate() {
                if corner >> k & 1 == 1 {
                    *pk = c.hi[k];
                } else {
                    *pk = c.lo[k];
                    sign = -sign;
                }
            }
            ie += sign * ps.antideriv(p[0], p[1], p[2]).unwrap();
        }
        let direct = ps.cuboid_integral(&c).unwrap();
        assert!((ie - direct).abs() < 1e-12 * direct.abs().max(1.0));
        assert!(direct >= 0.0);
    }

    #[test]
    fn json_round_trip() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let ps = ProdSum::new(&ProdSumConfig { hidden: vec![4], ..Default::default() }, &mut r).unwrap();
        let s = serde_json::to_string(&ps).unwrap();
        assert!(s.starts_with("{\"N\":2,"));
        let back: ProdSum = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ps);
        let bad = s.replacen("\"N\":2", "\"N\":3", 1);
        assert!(serde_json::from_str::<ProdSum>(&bad).is_err());
    }

    #[test]
    fn triple_rejects_bad_activation() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let tanh = MlpSpec::new(vec![3, 4, 1], Activation::Tanh).nonnegative();
        assert!(ConstrainedTriple::new(tanh, None, &mut r).is_err());
        let free = MlpSpec::new(vec![3, 4, 1], Activation::SoftplusCubed);
        assert!(ConstrainedTriple::new(free, None, &mut r).is_err());
        assert!(ConstrainedTriple::new(ConstrainedTriple::default_spec(), None, &mut r).is_ok());
    }

    #[test]
    fn triple_with_zero_effective_weights_has_zero_density() {
        let spec = MlpSpec::new(vec![3, 4, 1], Activation::SoftplusCubed).nonnegative();
        let mut ps = ParamSet::zeros(spec).unwrap();
        // softplus(-800) underflows to exactly zero
        for t in ps.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = -800.0);
        }
        let tri = ConstrainedTriple::from_params(ps).unwrap();
        let d = tri.density_batch(&Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 2.0, 0.5]]).unwrap()).unwrap();
        assert_eq!(d.data(), &[0.0, 0.0]);
    }
}
