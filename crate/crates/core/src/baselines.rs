//! Monte Carlo comparators: plain MC integration over cuboids and an STPP
//! whose influence is an ordinary MLP, so its compensator must be estimated
//! by sampling.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoint::{integral_forward, InitOptions, MlpSpec, ParamSet};
use crate::error::{Error, Result};
use crate::evaluate::{SequenceScorer, SpatialModel};
use crate::grid::{GridDist, Rect, SpatialGrid};
use crate::numkit::{Activation, Backend, Eager, Tape, Tensor, Var};
use crate::prodnet::Cuboid;
use crate::rng::stream;
use crate::stpp::{EventSequence, DEFAULT_WINDOW};
use crate::train::fit::{Chunk, Trainable};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Latin hypercube instead of independent uniform samples. The reported
    /// standard error still uses the independent-sample formula.
    pub stratified: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_samples: 1000,
            seed: 0,
            stratified: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// `n` points in `c`, as an `[n, 3]` tensor.
fn sample_cuboid<R: Rng>(c: &Cuboid, n: usize, stratified: bool, rng: &mut R) -> Vec<[f64; 3]> {
    let mut pts = vec![[0.0; 3]; n];
    for k in 0..3 {
        let (lo, w) = (c.lo[k], c.hi[k] - c.lo[k]);
        if stratified {
            let mut cells: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(&mut cells[..], rng);
            for (p, cell) in pts.iter_mut().zip(cells) {
                p[k] = lo + w * (cell as f64 + rng.random::<f64>()) / n as f64;
            }
        } else {
            for p in pts.iter_mut() {
                p[k] = lo + w * rng.random::<f64>();
            }
        }
    }
    pts
}

/// `vol(c) · mean f(X)` for uniform `X` in `c`. `f` maps an `[n, 3]` batch to
/// `n` values.
pub fn mc_integrate<F>(f: F, c: &Cuboid, cfg: &McConfig) -> Result<McEstimate>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if cfg.n_samples == 0 {
        return Err(Error::invalid("Monte Carlo integration needs at least one sample"));
    }
    let n = cfg.n_samples;
    let pts = sample_cuboid(c, n, cfg.stratified, &mut stream(cfg.seed, "mc"));
    let x = Tensor::matrix(n, 3, pts.into_iter().flatten().collect())?;
    let y = f(&x)?;
    if y.numel() != n {
        return Err(Error::shape("mc_integrate", &[n, 1], y.shape()));
    }
    let vol = c.volume();
    let mean = y.data().iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: vol * mean,
        std_error: vol * (var / n as f64).sqrt(),
    })
}

/// Network inputs of a sampled log-likelihood: influence pairs, one block
/// of uniform samples per compensator box, and per-sample weights
/// `vol / n_samples`.
struct McBatch {
    pairs: Tensor,
    owner: Rc<[usize]>,
    samples: Tensor,
    weights: Tensor,
    n_events: usize,
    exposure: f64,
}

impl McBatch {
    fn new<R: Rng>(chunks: &[Chunk<'_>], window: Option<usize>, n_samples: usize, rng: &mut R) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut owner = Vec::new();
        let mut samples = Vec::new();
        let mut weights = Vec::new();
        let mut exposure = 0.0;
        let mut base = 0;
        for (seq, range) in chunks {
            let ev = seq.events();
            if range.start > range.end || range.end > ev.len() {
                return Err(Error::invalid(format!("chunk {range:?} out of bounds for {} events", ev.len())));
            }
            let (d, big_t) = (seq.domain(), seq.horizon());
            let begin = if range.start == 0 { 0.0 } else { ev[range.start].t };
            let end = if range.end == ev.len() { big_t } else { ev[range.end].t };
            exposure += d.area() * (end - begin);
            for (k, e) in ev[range.clone()].iter().enumerate() {
                let i = range.start + k;
                let first = window.map_or(0, |w| i.saturating_sub(w));
                for p in &ev[first..i] {
                    pairs.extend([e.x - p.x, e.y - p.y, e.t - p.t]);
                    owner.push(base + k);
                }
                let until = window.and_then(|w| ev.get(i + w)).map_or(big_t, |n| n.t.min(big_t));
                if until > e.t {
                    let c = Cuboid::new([d.x0 - e.x, d.y0 - e.y, 0.0], [d.x1 - e.x, d.y1 - e.y, until - e.t])?;
                    let w = c.volume() / n_samples as f64;
                    for p in sample_cuboid(&c, n_samples, false, rng) {
                        samples.extend(p);
                        weights.push(w);
                    }
                }
            }
            base += range.len();
        }
        Ok(McBatch {
            pairs: Tensor::matrix(owner.len(), 3, pairs)?,
            owner: owner.into(),
            samples: Tensor::matrix(weights.len(), 3, samples)?,
            weights: Tensor::column(weights),
            n_events: base,
            exposure,
        })
    }

    /// Estimated log-likelihood. `influence` maps `[n, 3]` displacements to
    /// `[n, 1]` nonnegative values.
    fn evaluate<B: Backend>(
        &self,
        be: &B,
        log_mu: &B::V,
        influence: impl Fn(&B::V) -> Result<B::V>,
    ) -> Result<B::V> {
        let mu = be.exp(log_mu)?;
        let mut ll = be.scale(&mu, -self.exposure)?;
        if self.n_events > 0 {
            let lam = if self.owner.is_empty() {
                be.add(&be.constant(Tensor::zeros(&[self.n_events, 1]))?, &mu)?
            } else {
                let f = influence(&be.constant(self.pairs.clone())?)?;
                be.add(&be.segment_sum(&f, &self.owner, self.n_events)?, &mu)?
            };
            ll = be.add(&ll, &be.sum(&be.log(&lam)?)?)?;
        }
        if self.weights.numel() > 0 {
            let f = influence(&be.constant(self.samples.clone())?)?;
            let mass = be.sum(&be.mul(&f, &be.constant(self.weights.clone())?)?)?;
            ll = be.sub(&ll, &mass)?;
        }
        Ok(ll)
    }
}

/// Sampled log-likelihood of whole sequences under `λ = μ + Σ f`, for any
/// batched influence function. Used to compare against closed forms.
pub fn mc_log_likelihood<F>(mu: f64, influence: F, seq: &EventSequence, window: Option<usize>, cfg: &McConfig) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if cfg.n_samples == 0 {
        return Err(Error::invalid("Monte Carlo likelihood needs at least one sample"));
    }
    let batch = McBatch::new(&[(seq, 0..seq.len())], window, cfg.n_samples, &mut stream(cfg.seed, "mc"))?;
    batch.evaluate(&Eager, &Tensor::scalar(mu.ln()), |x: &Tensor| influence(x))?.item()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McStppConfig {
    pub hidden: Vec<usize>,
    pub window: Option<usize>,
    /// Samples per compensator box.
    pub n_samples: usize,
    /// Seed of the samples used when scoring whole sequences.
    pub eval_seed: u64,
    /// Time span used to standardize the time displacement.
    pub time_scale: f64,
}

impl Default for McStppConfig {
    fn default() -> Self {
        McStppConfig {
            hidden: vec![32, 32],
            window: Some(DEFAULT_WINDOW),
            n_samples: 1000,
            eval_seed: 0,
            time_scale: 10.0,
        }
    }
}

/// `λ(s, t) = μ + Σ_j softplus(MLP((s − s_j) / a, (t − t_j) / b))` with a
/// sampled compensator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "McStppRepr", into = "McStppRepr")]
pub struct McStppModel {
    log_mu: Tensor,
    mlp: ParamSet,
    scale: [f64; 3],
    window: Option<usize>,
    domain: Rect,
    n_samples: usize,
    eval_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct McStppRepr {
    mu: f64,
    mlp: ParamSet,
    scale: [f64; 3],
    #[serde(rename = "W")]
    window: Option<usize>,
    domain: Rect,
    n_samples: usize,
    eval_seed: u64,
}

impl TryFrom<McStppRepr> for McStppModel {
    type Error = Error;
    fn try_from(r: McStppRepr) -> Result<Self> {
        if !(r.mu > 0.0 && r.mu.is_finite()) || r.n_samples == 0 || r.window == Some(0) {
            return Err(Error::invalid("invalid Monte Carlo STPP model file"));
        }
        if r.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("input scales must be positive"));
        }
        r.domain.validate()?;
        Ok(McStppModel {
            log_mu: Tensor::scalar(r.mu.ln()),
            mlp: r.mlp,
            scale: r.scale,
            window: r.window,
            domain: r.domain,
            n_samples: r.n_samples,
            eval_seed: r.eval_seed,
        })
    }
}

impl From<McStppModel> for McStppRepr {
    fn from(m: McStppModel) -> Self {
        McStppRepr {
            mu: m.mu(),
            mlp: m.mlp,
            scale: m.scale,
            window: m.window,
            domain: m.domain,
            n_samples: m.n_samples,
            eval_seed: m.eval_seed,
        }
    }
}

impl McStppModel {
    pub fn init<R: Rng + ?Sized>(cfg: &McStppConfig, domain: Rect, mu: f64, rng: &mut R) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!("background rate must be positive, got {mu}")));
        }
        if cfg.n_samples == 0 || cfg.window == Some(0) || cfg.time_scale.is_nan() || cfg.time_scale <= 0.0 {
            return Err(Error::invalid(format!("invalid Monte Carlo STPP configuration {cfg:?}")));
        }
        domain.validate()?;
        let widths = std::iter::once(3).chain(cfg.hidden.iter().copied()).chain(std::iter::once(1)).collect();
        let mut mlp = ParamSet::init_with(MlpSpec::new(widths, Activation::Tanh), rng, InitOptions::default())?;
        // start with a small positive influence, about μ/20 per pair
        if let Some(b) = mlp.tensors_mut().last_mut() {
            b.data_mut()[0] = (0.05 * mu).exp_m1().ln();
        }
        Ok(McStppModel {
            log_mu: Tensor::scalar(mu.ln()),
            mlp,
            scale: [domain.width(), domain.height(), cfg.time_scale],
            window: cfg.window,
            domain,
            n_samples: cfg.n_samples,
            eval_seed: cfg.eval_seed,
        })
    }

    pub fn mu(&self) -> f64 {
        self.log_mu.data()[0].exp()
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn window(&self) -> Option<usize> {
        self.window
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn set_n_samples(&mut self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        self.n_samples = n;
        Ok(())
    }

    /// Makes the influence a constant `c > 0` (all network weights zero).
    pub fn set_constant_influence(&mut self, c: f64) -> Result<()> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("constant influence must be positive"));
        }
        let mut ts = self.mlp.tensors_mut();
        for t in ts.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        if let Some(b) = ts.last_mut() {
            b.data_mut()[0] = c.exp_m1().ln();
        }
        Ok(())
    }

    fn influence_on<B: Backend>(&self, be: &B, raw: &[B::V], x: &B::V) -> Result<B::V> {
        let net = self.mlp.bind(be, raw)?;
        let inv = be.constant(Tensor::row(self.scale.iter().map(|s| 1.0 / s).collect()))?;
        let z = integral_forward(be, &net, &be.mul_row(x, &inv)?)?;
        be.softplus(&z)
    }

    /// Influence at `[n, 3]` displacements.
    pub fn influence_batch(&self, x: &Tensor) -> Result<Tensor> {
        let raw: Vec<Tensor> = self.mlp.tensors().into_iter().cloned().collect();
        self.influence_on(&Eager, &raw, x)
    }

    fn eager_ll(&self, chunks: &[Chunk<'_>], rng: &mut ChaCha8Rng) -> Result<f64> {
        let batch = McBatch::new(chunks, self.window, self.n_samples, rng)?;
        let raw: Vec<Tensor> = self.mlp.tensors().into_iter().cloned().collect();
        batch.evaluate(&Eager, &self.log_mu, |x: &Tensor| self.influence_on(&Eager, &raw, x))?.item()
    }

    /// Estimated log-likelihood with the model's evaluation seed.
    pub fn log_likelihood(&self, seq: &EventSequence) -> Result<f64> {
        self.eager_ll(&[(seq, 0..seq.len())], &mut stream(self.eval_seed, "mc-eval"))
    }

    pub fn intensity_grid(&self, t: f64, hist: &EventSequence, grid: &SpatialGrid) -> Result<Vec<f64>> {
        let past = hist.before(t);
        let recent = match self.window {
            Some(w) if past.len() > w => &past[past.len() - w..],
            _ => past,
        };
        let pts = grid.points();
        let mut lam = vec![self.mu(); pts.len()];
        if recent.is_empty() {
            return Ok(lam);
        }
        let mut rows = Vec::with_capacity(pts.len() * recent.len() * 3);
        for e in recent {
            for &(x, y) in &pts {
                rows.extend([x - e.x, y - e.y, t - e.t]);
            }
        }
        let f = self.influence_batch(&Tensor::matrix(pts.len() * recent.len(), 3, rows)?)?;
        for chunk in f.data().chunks(pts.len()) {
            for (l, v) in lam.iter_mut().zip(chunk) {
                *l += v;
            }
        }
        Ok(lam)
    }
}

impl Trainable for McStppModel {
    fn params(&self) -> Vec<&Tensor> {
        std::iter::once(&self.log_mu).chain(self.mlp.tensors()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.log_mu).chain(self.mlp.tensors_mut()).collect()
    }

    fn nll_grad(&self, chunks: &[Chunk<'_>], rng: &mut ChaCha8Rng) -> Result<(f64, Vec<Tensor>)> {
        let batch = McBatch::new(chunks, self.window, self.n_samples, rng)?;
        let tape = Tape::new();
        let raw: Vec<Var> = self.params().into_iter().map(|t| tape.param(t.clone())).collect::<Result<_>>()?;
        let be = &tape;
        let ll = batch.evaluate(&be, &raw[0], |x: &Var| self.influence_on(&be, &raw[1..], x))?;
        let nll = ll.scale(-1.0)?;
        let value = nll.item()?;
        Ok((value, tape.backward(nll)?.into_vec()))
    }

    fn nll(&self, seqs: &[EventSequence]) -> Result<f64> {
        seqs.iter().map(|s| self.log_likelihood(s).map(|ll| -ll)).sum()
    }
}

impl SequenceScorer for McStppModel {
    fn sequence_ll(&self, seq: &EventSequence) -> Result<f64> {
        self.log_likelihood(seq)
    }
}

impl SpatialModel for McStppModel {
    fn spatial_density(&self, t: f64, seq: &EventSequence, grid: &SpatialGrid) -> Result<GridDist> {
        GridDist::from_weights(self.intensity_grid(t, seq, grid)?)
    }
}
