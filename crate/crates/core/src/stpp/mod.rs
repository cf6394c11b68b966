//! The AutoSTPP intensity model and its closed-form log-likelihood.
//!
//! `λ(s, t) = μ + Σ_j f(s − s_j, t − t_j)` over the `W` most recent events
//! before `t`, where `f` is a [`ProdSum`]. The compensator is computed from
//! integral-network differences, so no numerical quadrature is involved.

mod events;

use std::ops::Range;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use events::{read_jsonl, write_jsonl, Event, EventSequence};

use crate::error::{Error, Result};
use crate::grid::{GridDist, Rect, SpatialGrid};
use crate::numkit::{Backend, Eager, Tensor};
use crate::autoint::WeightConstraint;
use crate::prodnet::{prodsum_parts, BoundProdSum, ProdSum, ProdSumConfig};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Default number of past events whose influence is summed.
pub const DEFAULT_WINDOW: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct AutoStppModel {
    log_mu: Tensor,
    prodsum: ProdSum,
    window: Option<usize>,
    domain: Rect,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    version: u32,
    mu: f64,
    /// `null` means unbounded history.
    #[serde(rename = "W")]
    window: Option<usize>,
    domain: Rect,
    prodsum: ProdSum,
}

impl TryFrom<ModelRepr> for AutoStppModel {
    type Error = Error;
    fn try_from(r: ModelRepr) -> Result<Self> {
        if r.version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model format version {}", r.version)));
        }
        AutoStppModel::new(r.prodsum, r.mu, r.window, r.domain)
    }
}

impl From<AutoStppModel> for ModelRepr {
    fn from(m: AutoStppModel) -> Self {
        ModelRepr {
            version: MODEL_FORMAT_VERSION,
            mu: m.mu(),
            window: m.window,
            domain: m.domain,
            prodsum: m.prodsum,
        }
    }
}

/// Initialization options for [`AutoStppModel::init`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_terms: usize,
    pub hidden: Vec<usize>,
    pub window: Option<usize>,
    /// Time span over which the initial temporal factors are spread.
    pub time_scale: f64,
    pub gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_terms: 2,
            hidden: vec![32, 32],
            window: Some(DEFAULT_WINDOW),
            time_scale: 10.0,
            gain: 1.0,
        }
    }
}

impl AutoStppModel {
    pub fn new(prodsum: ProdSum, mu: f64, window: Option<usize>, domain: Rect) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!("background rate must be positive, got {mu}")));
        }
        if window == Some(0) {
            return Err(Error::invalid("history window must be at least 1"));
        }
        domain.validate()?;
        Ok(AutoStppModel {
            log_mu: Tensor::scalar(mu.ln()),
            prodsum,
            window,
            domain,
        })
    }

    /// A fresh model for data on `domain` with background rate `mu`.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, domain: Rect, mu: f64, rng: &mut R) -> Result<Self> {
        let pcfg = ProdSumConfig {
            n_terms: cfg.n_terms,
            hidden: cfg.hidden.clone(),
            ranges: [
                (-domain.width(), domain.width()),
                (-domain.height(), domain.height()),
                (0.0, cfg.time_scale),
            ],
            gain: cfg.gain,
            ..ProdSumConfig::default()
        };
        Self::new(ProdSum::new(&pcfg, rng)?, mu, cfg.window, domain)
    }

    /// Makes every influence term identically zero, leaving a homogeneous
    /// Poisson model with rate `μ`. The first factor of each term becomes an
    /// unconstrained network with all parameters zero.
    pub fn zero_influence(&mut self) {
        for term in self.prodsum.terms_mut() {
            term.factors[0].spec.constraint = WeightConstraint::Free;
            for t in term.factors[0].tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn mu(&self) -> f64 {
        self.log_mu.data()[0].exp()
    }

    pub fn set_mu(&mut self, mu: f64) -> Result<()> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!("background rate must be positive, got {mu}")));
        }
        self.log_mu = Tensor::scalar(mu.ln());
        Ok(())
    }

    pub fn prodsum(&self) -> &ProdSum {
        &self.prodsum
    }

    pub fn prodsum_mut(&mut self) -> &mut ProdSum {
        &mut self.prodsum
    }

    pub fn window(&self) -> Option<usize> {
        self.window
    }

    pub fn set_window(&mut self, window: Option<usize>) -> Result<()> {
        if window == Some(0) {
            return Err(Error::invalid("history window must be at least 1"));
        }
        self.window = window;
        Ok(())
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    /// Parameter tensors: `log μ` followed by the ProdSum parameters.
    pub fn tensors(&self) -> Vec<&Tensor> {
        std::iter::once(&self.log_mu).chain(self.prodsum.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.log_mu).chain(self.prodsum.tensors_mut()).collect()
    }

    fn recent<'a>(&self, hist: &'a [Event]) -> &'a [Event] {
        match self.window {
            Some(w) if hist.len() > w => &hist[hist.len() - w..],
            _ => hist,
        }
    }

    /// Conditional intensity at `(x, y, t)` given the events of `hist` before `t`.
    pub fn intensity(&self, x: f64, y: f64, t: f64, hist: &EventSequence) -> Result<f64> {
        Ok(self.intensity_points(&[(x, y, t)], hist)?[0])
    }

    pub fn intensity_points(&self, pts: &[(f64, f64, f64)], hist: &EventSequence) -> Result<Vec<f64>> {
        let mu = self.mu();
        let mut rows = Vec::new();
        let mut owner = Vec::new();
        for (p, &(x, y, t)) in pts.iter().enumerate() {
            for e in self.recent(hist.before(t)) {
                rows.push(vec![x - e.x, y - e.y, t - e.t]);
                owner.push(p);
            }
        }
        let mut out = vec![mu; pts.len()];
        if !rows.is_empty() {
            let inf = self.prodsum.influence_batch(&Tensor::from_rows(&rows)?)?;
            for (v, &p) in inf.data().iter().zip(&owner) {
                out[p] += v;
            }
        }
        Ok(out)
    }

    /// `λ(·, t)` at every grid node, in grid order.
    pub fn intensity_grid(&self, t: f64, hist: &EventSequence, grid: &SpatialGrid) -> Result<Vec<f64>> {
        let recent = self.recent(hist.before(t));
        let (xs, ys) = (grid.xs(), grid.ys());
        let mut lam = vec![self.mu(); grid.len()];
        if recent.is_empty() {
            return Ok(lam);
        }
        let w = recent.len();
        let ux: Vec<f64> = recent.iter().flat_map(|e| xs.iter().map(move |x| x - e.x)).collect();
        let uy: Vec<f64> = recent.iter().flat_map(|e| ys.iter().map(move |y| y - e.y)).collect();
        let ut: Vec<f64> = recent.iter().map(|e| t - e.t).collect();
        for term in 0..self.prodsum.n_terms() {
            let (_, fx) = self.prodsum.factor_table(term, 0, &ux)?;
            let (_, fy) = self.prodsum.factor_table(term, 1, &uy)?;
            let (_, ft) = self.prodsum.factor_table(term, 2, &ut)?;
            for j in 0..w {
                let fxj = &fx[j * xs.len()..(j + 1) * xs.len()];
                let fyj = &fy[j * ys.len()..(j + 1) * ys.len()];
                for (i, a) in fxj.iter().enumerate() {
                    let row = &mut lam[i * ys.len()..(i + 1) * ys.len()];
                    let c = a * ft[j];
                    for (l, b) in row.iter_mut().zip(fyj) {
                        *l += c * b;
                    }
                }
            }
        }
        Ok(lam)
    }

    /// `λ(·, t)` on the grid, normalized to a distribution.
    pub fn conditional_spatial_density(&self, t: f64, hist: &EventSequence, grid: &SpatialGrid) -> Result<GridDist> {
        GridDist::from_weights(self.intensity_grid(t, hist, grid)?)
    }

    pub fn log_likelihood(&self, seq: &EventSequence) -> Result<f64> {
        let batch = LikelihoodBatch::new(&[seq], self.window)?;
        let net = self.prodsum.bind_eager()?;
        batch.evaluate(&Eager, &self.log_mu, &net)?.item()
    }
}

/// Precomputed network inputs for the log-likelihood of one or more sequences.
///
/// Influence rows hold `(s_i − s_j, t_i − t_j)` for each event `i` and each of
/// its at most `W` predecessors `j`. Box rows hold, for each event `j`, the
/// shifted domain `S − s_j` and the time span during which `j` counts among the
/// `W` most recent events, which is `[t_j, min(t_{j+W}, T))`.
#[derive(Clone, Debug)]
pub struct LikelihoodBatch {
    axes: [Tensor; 3],
    points: usize,
    boxes: usize,
    owner: Rc<[usize]>,
    /// `Σ |S|·T` over the sequences.
    exposure: f64,
}

impl LikelihoodBatch {
    pub fn new(seqs: &[&EventSequence], window: Option<usize>) -> Result<Self> {
        let chunks: Vec<(&EventSequence, Range<usize>)> = seqs.iter().map(|s| (*s, 0..s.len())).collect();
        Self::from_chunks(&chunks, window)
    }

    /// The terms owned by the events `range` of each sequence: their log
    /// intensities (with history reaching back before the range), their
    /// compensator boxes, and the background over `[t_a, t_b)`, widened to 0
    /// for the first chunk and to `T` for the last. Chunks that partition a
    /// sequence sum to its full log-likelihood.
    pub fn from_chunks(chunks: &[(&EventSequence, Range<usize>)], window: Option<usize>) -> Result<Self> {
        let mut pairs: [Vec<f64>; 3] = Default::default();
        let mut lo: [Vec<f64>; 3] = Default::default();
        let mut hi: [Vec<f64>; 3] = Default::default();
        let mut owner = Vec::new();
        let mut exposure = 0.0;
        let mut base = 0;
        for (seq, range) in chunks {
            let ev = seq.events();
            if range.start > range.end || range.end > ev.len() {
                return Err(Error::invalid(format!("chunk {range:?} out of bounds for {} events", ev.len())));
            }
            let d = seq.domain();
            let big_t = seq.horizon();
            let bound = |i: usize| match i {
                i if i == ev.len() => big_t,
                0 => 0.0,
                i => ev[i].t,
            };
            let begin = if range.start == 0 { 0.0 } else { bound(range.start) };
            let end = bound(range.end);
            exposure += d.area() * (end - begin);
            for (k, e) in ev[range.clone()].iter().enumerate() {
                let i = range.start + k;
                let first = window.map_or(0, |w| i.saturating_sub(w));
                for p in &ev[first..i] {
                    pairs[0].push(e.x - p.x);
                    pairs[1].push(e.y - p.y);
                    pairs[2].push(e.t - p.t);
                    owner.push(base + k);
                }
                let until = window.and_then(|w| ev.get(i + w)).map_or(big_t, |n| n.t.min(big_t));
                lo[0].push(d.x0 - e.x);
                hi[0].push(d.x1 - e.x);
                lo[1].push(d.y0 - e.y);
                hi[1].push(d.y1 - e.y);
                lo[2].push(0.0);
                hi[2].push(until - e.t);
            }
            base += range.len();
        }
        let points = owner.len();
        let axes = [0, 1, 2].map(|k| {
            let mut col = std::mem::take(&mut pairs[k]);
            col.extend_from_slice(&lo[k]);
            col.extend_from_slice(&hi[k]);
            Tensor::column(col)
        });
        Ok(LikelihoodBatch {
            axes,
            points,
            boxes: base,
            owner: owner.into(),
            exposure,
        })
    }

    pub fn n_events(&self) -> usize {
        self.boxes
    }

    /// Total log-likelihood on any backend; `log_mu` has shape `[1]`.
    pub fn evaluate<B: Backend>(&self, be: &B, log_mu: &B::V, net: &BoundProdSum<B::V>) -> Result<B::V> {
        let mu = be.exp(log_mu)?;
        let background = be.scale(&mu, self.exposure)?;
        if self.boxes == 0 {
            return be.scale(&background, -1.0);
        }
        let axes = [
            be.constant(self.axes[0].clone())?,
            be.constant(self.axes[1].clone())?,
            be.constant(self.axes[2].clone())?,
        ];
        let parts = prodsum_parts(be, net, &axes, self.points, self.boxes)?;
        let excite = match parts.influence {
            Some(inf) => be.segment_sum(&inf, &self.owner, self.boxes)?,
            None => be.constant(Tensor::zeros(&[self.boxes, 1]))?,
        };
        let lam = be.add(&excite, &mu)?;
        let log_sum = be.sum(&be.log(&lam)?)?;
        let mass = be.sum(&parts.mass.expect("one box per event"))?;
        let compensator = be.add(&background, &mass)?;
        be.sub(&log_sum, &compensator)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(mut m: AutoStppModel) -> AutoStppModel {
        m.zero_influence();
        m
    }

    fn model(seed: u64) -> AutoStppModel {
        let cfg = ModelConfig {
            hidden: vec![6],
            time_scale: 1.0,
            ..ModelConfig::default()
        };
        AutoStppModel::init(&cfg, Rect::unit(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn empty_and_poisson_cases() {
        let m = zeroed(model(1));
        let empty = EventSequence::new(vec![], Rect::unit(), 1.0).unwrap();
        assert_eq!(m.log_likelihood(&empty).unwrap(), -1.0);
        assert_eq!(m.intensity(0.3, 0.3, 0.5, &empty).unwrap(), 1.0);
        let one = EventSequence::new(vec![Event::new(0.2, 0.5, 0.5)], Rect::unit(), 1.0).unwrap();
        assert!((m.log_likelihood(&one).unwrap() + 1.0).abs() < 1e-15);
        let two = EventSequence::new(vec![Event::new(0.2, 0.5, 0.5), Event::new(0.3, 0.1, 0.1)], Rect::unit(), 1.0).unwrap();
        assert_eq!(m.intensity(0.3, 0.3, 0.5, &two).unwrap(), 1.0);
    }

    #[test]
    fn intensity_is_sum_of_influences() {
        let m = model(2);
        let seq = EventSequence::new(
            vec![Event::new(0.1, 0.2, 0.3), Event::new(0.4, 0.8, 0.1), Event::new(0.7, 0.5, 0.5)],
            Rect::unit(),
            1.0,
        )
        .unwrap();
        let (x, y, t) = (0.45, 0.55, 0.9);
        let mut want = m.mu();
        for e in seq.events() {
            want += m.prodsum().influence(x - e.x, y - e.y, t - e.t).unwrap();
        }
        let got = m.intensity(x, y, t, &seq).unwrap();
        assert!((got - want).abs() < 1e-13 * want);
        assert!(got >= m.mu());
    }

    #[test]
    fn grid_matches_pointwise_intensity() {
        let m = model(3);
        let seq = EventSequence::new(vec![Event::new(0.1, 0.2, 0.3), Event::new(0.4, 0.8, 0.1)], Rect::unit(), 1.0).unwrap();
        let grid = SpatialGrid::square(Rect::unit(), 5).unwrap();
        let lam = m.intensity_grid(0.6, &seq, &grid).unwrap();
        let pts: Vec<_> = grid.points().into_iter().map(|(x, y)| (x, y, 0.6)).collect();
        let direct = m.intensity_points(&pts, &seq).unwrap();
        for (a, b) in lam.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12 * b);
        }
        let dist = m.conditional_spatial_density(0.6, &seq, &grid).unwrap();
        assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_truncation_is_exact_for_short_sequences() {
        let mut m = model(4);
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let mut ts: Vec<f64> = (0..12).map(|_| r.random_range(0.0..1.0)).collect();
        ts.sort_by(f64::total_cmp);
        let ev = ts.iter().map(|&t| Event::new(t, r.random_range(0.0..1.0), r.random_range(0.0..1.0))).collect();
        let seq = EventSequence::new(ev, Rect::unit(), 1.0).unwrap();
        let a = m.log_likelihood(&seq).unwrap();
        m.set_window(None).unwrap();
        let b = m.log_likelihood(&seq).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        m.set_window(Some(3)).unwrap();
        assert_ne!(m.log_likelihood(&seq).unwrap(), b);
    }

    #[test]
    fn json_round_trip_and_version() {
        let m = model(5);
        let s = serde_json::to_string(&m).unwrap();
        let back: AutoStppModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back.mu(), m.mu());
        assert_eq!(back.prodsum(), m.prodsum());
        let bad = s.replace("\"version\":1", "\"version\":99");
        assert!(serde_json::from_str::<AutoStppModel>(&bad).is_err());
    }
}
